//! Hydrodynamic projection, μ-constants, high-order moment functionals and
//! residuals of the macroscopic balance laws.

use crate::discretization::MomentumGrid;
use crate::error::{invalid, Error, Result};
use crate::kernel_ops::OperatorMatrices;
use crate::mode_dynamics::ModeState;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

type C64 = Complex64;
const I: C64 = C64::new(0.0, 1.0);

/// Seven Jüttner moments and the derived constants `α₁, α₂, β`.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct MuConstants {
    pub mu0: f64,
    pub mu00: f64,
    pub mu11: f64,
    pub mu11_0: f64,
    pub mu1122_00: f64,
    pub mu1111_00: f64,
    pub mu11_00: f64,
    pub alpha1: f64,
    pub alpha2: f64,
    pub beta: f64,
}

impl MuConstants {
    /// Left side of the defining relation of `α₁` (zero by construction).
    pub fn alpha1_residual(&self) -> f64 {
        self.mu11 / self.mu0 * (self.mu11_0 - self.alpha1) - self.mu1122_00 + self.alpha1 * self.mu11_0
    }

    /// The bracket `(β+1)(μ¹¹²²₀₀ − μ¹¹¹¹₀₀)/3 + μ¹¹²²₀₀` that `β` is chosen to kill.
    pub fn beta_bracket(&self) -> f64 {
        (self.beta + 1.0) * (self.mu1122_00 - self.mu1111_00) / 3.0 + self.mu1122_00
    }

    /// Coefficient of `∂_t c` in the diagonal `Θ` relation.
    pub fn theta_c_coefficient(&self) -> f64 {
        self.mu00 / self.mu0 * (self.mu11_0 - self.alpha1) - self.mu11 + self.alpha1 * self.mu0
    }
}

pub fn compute_mu_constants(grid: &MomentumGrid) -> Result<MuConstants> {
    let jm = grid.maxwellian();
    let w = grid.quad_weights();
    let mut s = [0.0f64; 8];
    for (i, c) in grid.coords().iter().enumerate() {
        let e = grid.energies()[i];
        let m = w[i] * jm[i];
        let (p1, p2) = (c[0], c[1]);
        s[0] += m * e;
        s[1] += m * e * e;
        s[2] += m * p1 * p1;
        s[3] += m * p1 * p1 / e;
        s[4] += m * p1 * p1 * p2 * p2 / (e * e);
        s[5] += m * p1.powi(4) / (e * e);
        s[6] += m * p1 * p1 / (e * e);
        s[7] += m;
    }
    let [mu0, mu00, mu11, mu11_0, mu1122_00, mu1111_00, mu11_00, _] = s;
    if mu00 <= mu0 * mu0 {
        return Err(Error::GridTooCoarse(format!(
            "energy variance μ⁰⁰ − (μ⁰)² = {:e} is not positive",
            mu00 - mu0 * mu0
        )));
    }
    let den = mu11_0 - mu11 / mu0;
    let alpha1 = (mu1122_00 - mu11 * mu11_0 / mu0) / den;
    let alpha2 = mu11_0 / mu11;
    let beta = -3.0 * mu1122_00 / (mu1122_00 - mu1111_00) - 1.0;
    Ok(MuConstants { mu0, mu00, mu11, mu11_0, mu1122_00, mu1111_00, mu11_00, alpha1, alpha2, beta })
}

/// Coefficients of `Ph = (a + b·p + c p⁰)√J`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MacroCoefficients {
    pub a: C64,
    pub b: [C64; 3],
    pub c: C64,
}

impl MacroCoefficients {
    pub fn norm_sq(&self) -> f64 {
        self.a.norm_sqr() + self.b.iter().map(|v| v.norm_sqr()).sum::<f64>() + self.c.norm_sqr()
    }
}

/// `Θ_{mj}`, `Λ_m` and `A` of one grid function.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct MomentSet {
    pub theta: [[C64; 3]; 3],
    pub lambda: [C64; 3],
    pub a_func: C64,
}

#[derive(Clone, Debug)]
pub struct Projection {
    pub coeffs: MacroCoefficients,
    pub ph: Vec<C64>,
    pub micro: Vec<C64>,
}

/// Cached moment vectors for one grid.
#[derive(Clone, Debug)]
pub struct MacroOps {
    pub mu: MuConstants,
    n: usize,
    weights: Vec<f64>,
    sqrt_j: Vec<f64>,
    p: [Vec<f64>; 3],
    energy: Vec<f64>,
    /// Rows: a, b1, b2, b3, c functionals (already weighted).
    coeff_rows: [Vec<f64>; 5],
    /// Θ_{mj} weighted integrand vectors, m ≤ j.
    theta_rows: [[Vec<f64>; 3]; 3],
    lambda_rows: [Vec<f64>; 3],
    a_row: Vec<f64>,
}

impl MacroOps {
    pub fn new(grid: &MomentumGrid) -> Result<Self> {
        let mu = compute_mu_constants(grid)?;
        Self::with_mu(grid, mu)
    }

    pub fn with_mu(grid: &MomentumGrid, mu: MuConstants) -> Result<Self> {
        let n = grid.len();
        let w = grid.quad_weights().to_vec();
        let sj = grid.sqrt_maxwellian().to_vec();
        let e = grid.energies().to_vec();
        let p: [Vec<f64>; 3] = std::array::from_fn(|a| grid.coords().iter().map(|c| c[a]).collect());
        let var = mu.mu00 - mu.mu0 * mu.mu0;
        let row = |f: &dyn Fn(usize) -> f64| -> Vec<f64> { (0..n).map(|i| w[i] * sj[i] * f(i)).collect() };
        let c_row = row(&|i| (e[i] - mu.mu0) / var);
        let a_row0 = row(&|i| 1.0 - mu.mu0 * (e[i] - mu.mu0) / var);
        let b_rows: [Vec<f64>; 3] = std::array::from_fn(|m| row(&|i| p[m][i] / mu.mu11));
        let [b1, b2, b3] = b_rows;
        let theta_rows = std::array::from_fn(|m| {
            std::array::from_fn(|j| row(&|i| p[m][i] * p[j][i] / e[i] - mu.alpha1))
        });
        let lambda_rows = std::array::from_fn(|m| row(&|i| p[m][i] * (1.0 / e[i] - mu.alpha2)));
        let a_row = row(&|i| 1.0 / e[i]);
        Ok(Self {
            mu,
            n,
            weights: w,
            sqrt_j: sj,
            p,
            energy: e,
            coeff_rows: [a_row0, b1, b2, b3, c_row],
            theta_rows,
            lambda_rows,
            a_row,
        })
    }

    pub fn len(&self) -> usize {
        self.n
    }
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    fn check(&self, h: &[C64]) -> Result<()> {
        if h.len() != self.n {
            return invalid(format!("expected {} nodal values, got {}", self.n, h.len()));
        }
        Ok(())
    }

    #[inline]
    fn dot(row: &[f64], h: &[C64]) -> C64 {
        row.iter().zip(h).map(|(r, v)| v * *r).sum()
    }

    pub fn coefficients(&self, h: &[C64]) -> MacroCoefficients {
        let r = &self.coeff_rows;
        MacroCoefficients {
            a: Self::dot(&r[0], h),
            b: [Self::dot(&r[1], h), Self::dot(&r[2], h), Self::dot(&r[3], h)],
            c: Self::dot(&r[4], h),
        }
    }

    /// `(a + b·p + c p⁰)√J` at every node.
    pub fn reconstruct(&self, m: &MacroCoefficients) -> Vec<C64> {
        (0..self.n)
            .map(|i| {
                let v = m.a + m.b[0] * self.p[0][i] + m.b[1] * self.p[1][i] + m.b[2] * self.p[2][i]
                    + m.c * self.energy[i];
                v * self.sqrt_j[i]
            })
            .collect()
    }

    pub fn project(&self, h: &[C64]) -> Result<Projection> {
        self.check(h)?;
        let coeffs = self.coefficients(h);
        let ph = self.reconstruct(&coeffs);
        let micro = h.iter().zip(&ph).map(|(a, b)| a - b).collect();
        Ok(Projection { coeffs, ph, micro })
    }

    pub fn moments(&self, h: &[C64]) -> Result<MomentSet> {
        self.check(h)?;
        let mut theta = [[C64::new(0.0, 0.0); 3]; 3];
        for m in 0..3 {
            for j in m..3 {
                let v = Self::dot(&self.theta_rows[m][j], h);
                theta[m][j] = v;
                theta[j][m] = v;
            }
        }
        let lambda = std::array::from_fn(|m| Self::dot(&self.lambda_rows[m], h));
        Ok(MomentSet { theta, lambda, a_func: Self::dot(&self.a_row, h) })
    }

    /// Discrete `∫ h χ √J` for `χ ∈ {1, p₁, p₂, p₃, p⁰}`.
    pub fn invariant_moments(&self, h: &[C64]) -> [C64; 5] {
        let mut out = [C64::new(0.0, 0.0); 5];
        for i in 0..self.n {
            let v = h[i] * (self.weights[i] * self.sqrt_j[i]);
            out[0] += v;
            out[1] += v * self.p[0][i];
            out[2] += v * self.p[1][i];
            out[3] += v * self.p[2][i];
            out[4] += v * self.energy[i];
        }
        out
    }

    /// Normalized velocity components at the nodes.
    pub fn velocity(&self, axis: usize) -> Vec<f64> {
        self.p[axis].iter().zip(&self.energy).map(|(p, e)| p / e).collect()
    }
}

/// Orthonormal basis (columns) of the scaled invariants `W^{1/2} χ √J`.
pub fn null_basis_scaled(grid: &MomentumGrid, sqrt_w: &[f64]) -> DMatrix<f64> {
    let n = grid.len();
    let sj = grid.sqrt_maxwellian();
    let raw = DMatrix::from_fn(n, 5, |i, c| {
        let chi = match c {
            0 => 1.0,
            1..=3 => grid.coords()[i][c - 1],
            _ => grid.energies()[i],
        };
        sqrt_w[i] * sj[i] * chi
    });
    // Two passes of modified Gram–Schmidt.
    let mut q = raw;
    for _ in 0..2 {
        for c in 0..5 {
            for d in 0..c {
                let r = q.column(d).dot(&q.column(c));
                let col_d = q.column(d).clone_owned();
                let mut col = q.column_mut(c);
                col.axpy(-r, &col_d, 1.0);
            }
            let nrm = q.column(c).norm();
            q.column_mut(c).scale_mut(1.0 / nrm);
        }
    }
    q
}

pub fn project_p(grid: &MomentumGrid, mu: &MuConstants, h: &[C64]) -> Result<Projection> {
    MacroOps::with_mu(grid, *mu)?.project(h)
}

pub fn moment_functionals(grid: &MomentumGrid, mu: &MuConstants, h: &[C64]) -> Result<MomentSet> {
    MacroOps::with_mu(grid, *mu)?.moments(h)
}

/// How time derivatives inside the residuals are formed.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DerivativeMode {
    /// Second-order centred differences of the stored snapshots.
    CentredDifference,
    /// `∂_t f̂ = −(i p̂·k + L) f̂` evaluated from the generator.
    Exact,
}

/// Maximum residual of one balance law over a trajectory.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LawResidual {
    pub law: String,
    pub max_residual: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BalanceReport {
    pub dt: f64,
    pub scale: f64,
    pub laws: Vec<LawResidual>,
}

impl BalanceReport {
    pub fn worst(&self) -> &LawResidual {
        self.laws
            .iter()
            .max_by(|a, b| a.max_residual.total_cmp(&b.max_residual))
            .expect("report has laws")
    }

    /// Empirical constant `C` in `residual ≤ C (dt² + grid_tol)`.
    pub fn constant(&self, grid_tol: f64) -> f64 {
        self.worst().max_residual / (self.dt * self.dt + grid_tol)
    }

    /// Fails naming the worst law when `C` exceeds `c_max`.
    pub fn check_budget(&self, c_max: f64, grid_tol: f64) -> Result<()> {
        let w = self.worst();
        let budget = c_max * (self.dt * self.dt + grid_tol);
        if w.max_residual > budget {
            return Err(Error::BalanceLaw(format!(
                "{} residual {:.3e} exceeds budget {:.3e}",
                w.law, w.max_residual, budget
            )));
        }
        Ok(())
    }
}

pub const BALANCE_LAWS: [&str; 8] = [
    "energy_balance",
    "mass_balance",
    "mass_energy_combined",
    "momentum_balance",
    "temperature_balance",
    "theta_diagonal",
    "theta_off_diagonal",
    "lambda_moment",
];

struct Snapshot {
    m: MacroCoefficients,
    mom: MomentSet,
}

/// Residuals of the macroscopic balance laws along a mode trajectory with
/// equally spaced snapshots.  `∇_x` becomes `i·freq`.
pub fn balance_residuals(
    ops: &MacroOps,
    matrices: &OperatorMatrices,
    trajectory: &[ModeState],
    dt: f64,
    mode: DerivativeMode,
) -> Result<BalanceReport> {
    if trajectory.len() < 3 {
        return invalid("balance residuals need at least three snapshots");
    }
    let k = trajectory[0].freq;
    let mu = ops.mu;
    let vel: [Vec<f64>; 3] = std::array::from_fn(|a| ops.velocity(a));
    let kv: Vec<f64> = (0..ops.len()).map(|i| k[0] * vel[0][i] + k[1] * vel[1][i] + k[2] * vel[2][i]).collect();
    let snaps: Vec<Snapshot> = trajectory
        .iter()
        .map(|s| {
            let pr = ops.project(&s.values)?;
            Ok(Snapshot { m: pr.coeffs, mom: ops.moments(&pr.micro)? })
        })
        .collect::<Result<_>>()?;
    let scale = trajectory[0].values.iter().zip(&ops.weights).map(|(v, w)| v.norm_sqr() * w).sum::<f64>().sqrt();
    let scale = if scale > 0.0 { scale } else { 1.0 };
    let mut worst = [0.0f64; 8];
    let (lo, hi) = match mode {
        DerivativeMode::CentredDifference => (1, trajectory.len() - 1),
        DerivativeMode::Exact => (0, trajectory.len()),
    };
    for n in lo..hi {
        let s = &snaps[n];
        let (dm, dmom) = match mode {
            DerivativeMode::CentredDifference => {
                let (a, b) = (&snaps[n - 1], &snaps[n + 1]);
                let d = |x: C64, y: C64| (y - x) / (2.0 * dt);
                (
                    MacroCoefficients {
                        a: d(a.m.a, b.m.a),
                        b: std::array::from_fn(|i| d(a.m.b[i], b.m.b[i])),
                        c: d(a.m.c, b.m.c),
                    },
                    MomentSet {
                        theta: std::array::from_fn(|i| std::array::from_fn(|j| d(a.mom.theta[i][j], b.mom.theta[i][j]))),
                        lambda: std::array::from_fn(|i| d(a.mom.lambda[i], b.mom.lambda[i])),
                        a_func: d(a.mom.a_func, b.mom.a_func),
                    },
                )
            }
            DerivativeMode::Exact => {
                let f = &trajectory[n].values;
                let lf = matrices.apply_l(f)?;
                let fd: Vec<C64> = (0..f.len()).map(|i| -(I * kv[i] * f[i]) - lf[i]).collect();
                let pr = ops.project(&fd)?;
                (pr.coeffs, ops.moments(&pr.micro)?)
            }
        };
        // R = −i p̂·k f⊥ − L f⊥.
        let f = &trajectory[n].values;
        let pr = ops.project(f)?;
        let lmic = matrices.apply_l(&pr.micro)?;
        let r: Vec<C64> = (0..f.len()).map(|i| -(I * kv[i] * pr.micro[i]) - lmic[i]).collect();
        let rmom = ops.moments(&r)?;
        let (m, mom) = (&s.m, &s.mom);
        let kb: C64 = (0..3).map(|j| m.b[j] * k[j]).sum::<C64>() * I;
        let kl: C64 = (0..3).map(|j| mom.lambda[j] * k[j]).sum::<C64>() * I;
        let mut res = [0.0f64; 8];
        res[0] = (dm.a * mu.mu0 + dm.c * mu.mu00 + kb * mu.mu11).norm();
        res[1] = (dm.a + dm.c * mu.mu0 + kb * mu.mu11_0 + kl).norm();
        res[2] = (dm.a * (1.0 - mu.mu0 * mu.mu0 / mu.mu00) + kb * (mu.mu11_0 - mu.mu11 * mu.mu0 / mu.mu00) + kl).norm();
        for j in 0..3 {
            let kt: C64 = (0..3).map(|mm| mom.theta[mm][j] * k[mm]).sum::<C64>() * I;
            let v = dm.b[j] * mu.mu11 + I * k[j] * (m.a * mu.mu11_0 + m.c * mu.mu11) + kt;
            res[3] = res[3].max(v.norm());
        }
        res[4] = (dm.c * (mu.mu0 - mu.mu00 / mu.mu0) + kb * (mu.mu11_0 - mu.mu11 / mu.mu0) + kl).norm();
        for j in 0..3 {
            let v = dmom.theta[j][j] - rmom.theta[j][j] - dm.c * mu.theta_c_coefficient()
                - I * k[j] * m.b[j] * (mu.mu1122_00 - mu.mu1111_00);
            res[5] = res[5].max(v.norm());
        }
        for mm in 0..3 {
            for j in 0..3 {
                if mm == j {
                    continue;
                }
                let v = dmom.theta[mm][j] - rmom.theta[mm][j]
                    + I * (k[mm] * m.b[j] + k[j] * m.b[mm]) * mu.mu1122_00
                    + kl * mu.alpha1;
                res[6] = res[6].max(v.norm());
            }
        }
        for mm in 0..3 {
            let v = dmom.lambda[mm] - rmom.lambda[mm] + I * k[mm] * m.a * (mu.mu11_00 - mu.alpha2 * mu.mu11_0);
            res[7] = res[7].max(v.norm());
        }
        for (w, r) in worst.iter_mut().zip(res) {
            *w = w.max(r / scale);
        }
    }
    Ok(BalanceReport {
        dt,
        scale,
        laws: BALANCE_LAWS
            .iter()
            .zip(worst)
            .map(|(l, r)| LawResidual { law: (*l).to_string(), max_residual: r })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::build_grid;

    #[test]
    fn equilibrium_projection() {
        let g = build_grid(8.0, 9).unwrap();
        let ops = MacroOps::new(&g).unwrap();
        let h: Vec<C64> = g.sqrt_maxwellian().iter().map(|v| C64::new(*v, 0.0)).collect();
        let pr = ops.project(&h).unwrap();
        assert!((pr.coeffs.a - 1.0).norm() < 1e-12);
        assert!(pr.coeffs.b.iter().all(|b| b.norm() < 1e-14));
        assert!(pr.coeffs.c.norm() < 1e-12);
        assert!(pr.micro.iter().all(|v| v.norm() < 1e-12));
    }

    #[test]
    fn constants_relations() {
        let g = build_grid(10.0, 21).unwrap();
        let mu = compute_mu_constants(&g).unwrap();
        assert!(mu.alpha1_residual().abs() < 1e-12);
        assert!((mu.alpha2 * mu.mu11 - mu.mu11_0).abs() < 1e-15);
        assert!(mu.beta_bracket().abs() < 1e-12);
        // Isotropy gives 3 and 1/2; the lattice is only cubic-symmetric.
        assert!((mu.mu1111_00 / mu.mu1122_00 / 3.0 - 1.0).abs() < 1e-2);
        assert!((mu.beta - 0.5).abs() < 3e-2);
        assert!(mu.mu00 > mu.mu0 * mu.mu0);
    }
}
