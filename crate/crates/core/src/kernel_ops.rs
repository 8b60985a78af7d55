//! Cross-sections, collision frequency, the compact operator `K`, the
//! linearized operator `L`, the gain/loss split and the bilinear term `Γ`.
//!
//! Off-grid values at post-collision momenta are interpolated as ratios
//! against the Jüttner state, `F(p') ≈ J(p')·I[F/J](p')`.  Energy
//! conservation gives `J(p')J(q') = J(p)J(q)`, so the Maxwellian factors
//! leave the angular sum and `Q(J,J)` vanishes to rounding.

use crate::discretization::{angular_mass, AngularRule, MomentumGrid, Stencil};
use crate::error::{invalid, Error, Result};
use crate::kinematics::{cm_direction, dot, invariants_raw, norm_sq, Momentum3, Vec3, EPS_PQ};
use crate::macro_moments::null_basis_scaled;
use crate::par;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::sync::Arc;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PotentialKind {
    Soft,
    Hard,
}

/// Representative cross-section `σ = Φ(g) sin^γ θ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct KernelModel {
    pub kind: PotentialKind,
    pub b_exponent: f64,
    pub a_exponent: f64,
    pub angular_exponent: f64,
    pub chi_epsilon: f64,
}

pub const DEFAULT_CHI_EPSILON: f64 = 0.1;

impl KernelModel {
    pub fn soft(b: f64, gamma: f64) -> Result<Self> {
        let m = Self {
            kind: PotentialKind::Soft,
            b_exponent: b,
            a_exponent: 0.0,
            angular_exponent: gamma,
            chi_epsilon: DEFAULT_CHI_EPSILON,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn hard(a: f64, b: f64, gamma: f64) -> Result<Self> {
        let m = Self {
            kind: PotentialKind::Hard,
            b_exponent: b,
            a_exponent: a,
            angular_exponent: gamma,
            chi_epsilon: DEFAULT_CHI_EPSILON,
        };
        m.validate()?;
        Ok(m)
    }

    pub fn with_chi_epsilon(mut self, eps: f64) -> Result<Self> {
        self.chi_epsilon = eps;
        self.validate()?;
        Ok(self)
    }

    pub fn validate(&self) -> Result<()> {
        let (a, b, g) = (self.a_exponent, self.b_exponent, self.angular_exponent);
        if ![a, b, g, self.chi_epsilon].iter().all(|v| v.is_finite()) {
            return invalid("kernel parameters must be finite");
        }
        if !(g > -2.0) {
            return invalid(format!("angular exponent {g} must satisfy γ > -2"));
        }
        let bmax = 4f64.min(4.0 + g);
        match self.kind {
            PotentialKind::Soft => {
                if !(b > 0.0 && b < bmax) {
                    return invalid(format!(
                        "soft potential needs 0 < b < min(4, 4+γ) = {bmax}, got b = {b}"
                    ));
                }
            }
            PotentialKind::Hard => {
                if !(a >= 0.0 && a <= 2.0 + g) {
                    return invalid(format!("hard potential needs 0 ≤ a ≤ 2+γ, got a = {a}"));
                }
                if !(b >= 0.0 && b < bmax) {
                    return invalid(format!(
                        "hard potential needs 0 ≤ b < min(4, 4+γ) = {bmax}, got b = {b}"
                    ));
                }
            }
        }
        if !(self.chi_epsilon > 0.0) {
            return invalid(format!("chi_epsilon {} must be positive", self.chi_epsilon));
        }
        Ok(())
    }

    /// `ζ = min{2−|γ|, 4−b, 2}/4`.
    pub fn zeta(&self) -> f64 {
        (2.0 - self.angular_exponent.abs()).min(4.0 - self.b_exponent).min(2.0) / 4.0
    }

    /// Radial factor `Φ(g)`; callers guarantee `g > 0` when `b > 0`.
    #[inline]
    pub fn radial(&self, g: f64) -> f64 {
        let soft = if self.b_exponent == 0.0 { 1.0 } else { g.powf(-self.b_exponent) };
        match self.kind {
            PotentialKind::Soft => soft,
            PotentialKind::Hard => g.powf(self.a_exponent) + soft,
        }
    }

    /// Smooth cutoff: 0 below `ε`, 1 above `2ε`, cubic smoothstep between.
    #[inline]
    pub fn chi(&self, g: f64) -> f64 {
        let e = self.chi_epsilon;
        if g <= e {
            0.0
        } else if g >= 2.0 * e {
            1.0
        } else {
            let x = (g - e) / e;
            x * x * (3.0 - 2.0 * x)
        }
    }
}

pub fn sigma_eval(model: &KernelModel, g: f64, cos_theta: f64) -> Result<f64> {
    if !(cos_theta.abs() <= 1.0) {
        return invalid(format!("cos_theta {cos_theta} outside [-1, 1]"));
    }
    if !(g >= 0.0) {
        return invalid(format!("g = {g} must be nonnegative"));
    }
    if g == 0.0 && model.b_exponent > 0.0 {
        return Err(Error::Singularity { b: model.b_exponent });
    }
    let sin = (1.0 - cos_theta * cos_theta).max(0.0).sqrt();
    let ang = if model.angular_exponent == 0.0 { 1.0 } else { sin.powf(model.angular_exponent) };
    Ok(model.radial(g) * ang)
}

/// Which part of the compact operator to apply.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KSplit {
    Full,
    Chi,
    OneMinusChi,
}

/// Fraction of collision weight whose post-collision momenta left the hull.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct Leakage {
    pub max_node: f64,
    pub mean: f64,
}

impl Leakage {
    fn from_rows(rows: &[(f64, f64)]) -> Self {
        let mut max_node = 0f64;
        let (mut leak, mut tot) = (0.0, 0.0);
        for &(l, t) in rows {
            if t > 0.0 {
                max_node = max_node.max(l / t);
            }
            leak += l;
            tot += t;
        }
        Leakage { max_node, mean: if tot > 0.0 { leak / tot } else { 0.0 } }
    }
}

/// Skip pairs closer than this in relative momentum.
pub const G_MIN: f64 = 1e-8;

#[derive(Clone, Copy)]
struct Pair {
    /// `w_q v_φ Φ(g)`.
    weight: f64,
    chi: f64,
    tot: Vec3,
    half_g: f64,
    boost: f64,
    k: Vec3,
    e1: Vec3,
    e2: Vec3,
}

fn orthonormal_frame(k: &Vec3) -> (Vec3, Vec3) {
    let ax = if k[0].abs() <= k[1].abs() && k[0].abs() <= k[2].abs() {
        [1.0, 0.0, 0.0]
    } else if k[1].abs() <= k[2].abs() {
        [0.0, 1.0, 0.0]
    } else {
        [0.0, 0.0, 1.0]
    };
    let c = [k[1] * ax[2] - k[2] * ax[1], k[2] * ax[0] - k[0] * ax[2], k[0] * ax[1] - k[1] * ax[0]];
    let n = norm_sq(&c).sqrt();
    let e1 = [c[0] / n, c[1] / n, c[2] / n];
    let e2 = [k[1] * e1[2] - k[2] * e1[1], k[2] * e1[0] - k[0] * e1[2], k[0] * e1[1] - k[1] * e1[0]];
    (e1, e2)
}

/// Quadrature engine for all collision integrals over one grid.
#[derive(Clone, Debug)]
pub struct CollisionEngine {
    model: KernelModel,
    grid: Arc<MomentumGrid>,
    rule: AngularRule,
    c_gamma: f64,
}

impl CollisionEngine {
    pub fn new(model: KernelModel, grid: Arc<MomentumGrid>, rule: AngularRule) -> Result<Self> {
        model.validate()?;
        if (rule.angular_exponent - model.angular_exponent).abs() > 1e-15 {
            return invalid("angular rule exponent differs from the kernel model");
        }
        let c_gamma = angular_mass(model.angular_exponent);
        Ok(Self { model, grid, rule, c_gamma })
    }

    pub fn model(&self) -> &KernelModel {
        &self.model
    }
    pub fn grid(&self) -> &Arc<MomentumGrid> {
        &self.grid
    }
    pub fn rule(&self) -> &AngularRule {
        &self.rule
    }
    /// `∫_{S²} sin^γθ dω`.
    pub fn c_gamma(&self) -> f64 {
        self.c_gamma
    }

    #[inline]
    fn pair(&self, p: &Vec3, p0: f64, j: usize) -> Option<Pair> {
        let grid = &*self.grid;
        let q = &grid.coords()[j];
        let q0 = grid.energies()[j];
        let (g, s, moller) = invariants_raw(p, p0, q, q0);
        if g < G_MIN {
            return None;
        }
        let tot = [p[0] + q[0], p[1] + q[1], p[2] + q[2]];
        let tn2 = norm_sq(&tot);
        let gl = (p0 + q0) / s.sqrt();
        let boost = if tn2.sqrt() < EPS_PQ { 0.0 } else { (gl - 1.0) / tn2 };
        let k = cm_direction(p, p0, q, q0, g, s)?;
        let (e1, e2) = orthonormal_frame(&k);
        Some(Pair {
            weight: grid.quad_weights()[j] * moller * self.model.radial(g),
            chi: self.model.chi(g),
            tot,
            half_g: 0.5 * g,
            boost,
            k,
            e1,
            e2,
        })
    }

    /// Visits every angular node of one pair with the two post-collision stencils.
    #[inline]
    fn angular_pass(&self, pr: &Pair, mut visit: impl FnMut(f64, &Stencil, &Stencil)) {
        let r = &self.rule;
        let grid = &*self.grid;
        for a in 0..r.len() {
            let (c, sn) = (r.cos_theta[a], r.sin_theta[a]);
            let (cp, sp) = (sn * r.cos_phi[a], sn * r.sin_phi[a]);
            let om = [
                c * pr.k[0] + cp * pr.e1[0] + sp * pr.e2[0],
                c * pr.k[1] + cp * pr.e1[1] + sp * pr.e2[1],
                c * pr.k[2] + cp * pr.e1[2] + sp * pr.e2[2],
            ];
            let coef = pr.boost * dot(&pr.tot, &om);
            let mut po = [0.0; 3];
            let mut qo = [0.0; 3];
            for i in 0..3 {
                let v = pr.half_g * (om[i] + coef * pr.tot[i]);
                po[i] = 0.5 * pr.tot[i] + v;
                qo[i] = 0.5 * pr.tot[i] - v;
            }
            visit(r.weights[a], &grid.stencil(&po), &grid.stencil(&qo));
        }
    }

    /// `ν(p) = ∫∫ v_φ σ J(q)` for an arbitrary momentum.
    pub fn collision_frequency_at(&self, p: &Momentum3) -> f64 {
        let pc = p.components();
        let jm = self.grid.maxwellian();
        let mut acc = 0.0;
        for j in 0..self.grid.len() {
            if let Some(pr) = self.pair(&pc, p.energy(), j) {
                acc += pr.weight * jm[j];
            }
        }
        acc * self.c_gamma
    }

    pub fn nu_nodes(&self) -> Vec<f64> {
        par::map_slice(self.grid.nodes(), |p| self.collision_frequency_at(p))
    }

    /// `R(G)(p) = ∫∫ v_φ σ G(q)` at every node.
    pub fn loss_rate(&self, gfun: &[f64]) -> Vec<f64> {
        let grid = &*self.grid;
        par::map_indexed(grid.len(), |i| {
            let (p, p0) = (&grid.coords()[i], grid.energies()[i]);
            let mut acc = 0.0;
            for j in 0..grid.len() {
                if let Some(pr) = self.pair(p, p0, j) {
                    acc += pr.weight * gfun[j];
                }
            }
            acc * self.c_gamma
        })
    }

    /// Gain term `Q₊(F,G)`, loss term `Q₋(F,G) = F·R(G)` and `R(G)`.
    pub fn gain_loss(&self, f: &[f64], gfun: &[f64]) -> Result<GainLoss> {
        let grid = &*self.grid;
        if f.len() != grid.len() || gfun.len() != grid.len() {
            return invalid("gain/loss inputs must have one value per node");
        }
        let jm = grid.maxwellian();
        let rf: Vec<f64> = f.iter().zip(jm).map(|(a, b)| a / b).collect();
        let rg: Vec<f64> = gfun.iter().zip(jm).map(|(a, b)| a / b).collect();
        let rows = par::map_indexed(grid.len(), |i| {
            let (p, p0) = (&grid.coords()[i], grid.energies()[i]);
            let (mut gain, mut rate, mut leak, mut tot) = (0.0, 0.0, 0.0, 0.0);
            for j in 0..grid.len() {
                let Some(pr) = self.pair(p, p0, j) else { continue };
                let base = pr.weight * jm[j];
                rate += pr.weight * gfun[j];
                let mut ang = 0.0;
                self.angular_pass(&pr, |w, sp, sq| {
                    let a: f64 = (0..8).map(|c| rf[sp.idx[c]] * sp.w[c]).sum();
                    let b: f64 = (0..8).map(|c| rg[sq.idx[c]] * sq.w[c]).sum();
                    ang += w * a * b;
                    if sp.clamped || sq.clamped {
                        leak += base * w;
                    }
                    tot += base * w;
                });
                gain += base * ang;
            }
            (gain * jm[i], rate * self.c_gamma, leak, tot)
        });
        let q_plus: Vec<f64> = rows.iter().map(|r| r.0).collect();
        let r_of_g: Vec<f64> = rows.iter().map(|r| r.1).collect();
        let q_minus = f.iter().zip(&r_of_g).map(|(a, b)| a * b).collect();
        let lk: Vec<(f64, f64)> = rows.iter().map(|r| (r.2, r.3)).collect();
        Ok(GainLoss { q_plus, q_minus, r_of_g, leakage: Leakage::from_rows(&lk) })
    }

    /// Unsymmetrized `K h = K₂h − K₁h` by direct quadrature.
    pub fn apply_k_raw(&self, h: &[f64], split: KSplit) -> Vec<f64> {
        let grid = &*self.grid;
        let (jm, sj) = (grid.maxwellian(), grid.sqrt_maxwellian());
        let rho: Vec<f64> = h.iter().zip(sj).map(|(a, b)| a / b).collect();
        par::map_indexed(grid.len(), |i| {
            let (p, p0) = (&grid.coords()[i], grid.energies()[i]);
            let (mut k2, mut k1) = (0.0, 0.0);
            for j in 0..grid.len() {
                let Some(pr) = self.pair(p, p0, j) else { continue };
                let f = match split {
                    KSplit::Full => 1.0,
                    KSplit::Chi => pr.chi,
                    KSplit::OneMinusChi => 1.0 - pr.chi,
                };
                if f == 0.0 {
                    continue;
                }
                k1 += f * pr.weight * sj[j] * h[j];
                let mut ang = 0.0;
                self.angular_pass(&pr, |w, sp, sq| {
                    let a: f64 = (0..8).map(|c| rho[sp.idx[c]] * sp.w[c]).sum();
                    let b: f64 = (0..8).map(|c| rho[sq.idx[c]] * sq.w[c]).sum();
                    ang += w * (a + b);
                });
                k2 += f * pr.weight * jm[j] * ang;
            }
            sj[i] * (k2 - self.c_gamma * k1)
        })
    }

    /// Unsymmetrized `L h = ν h − K h`.
    pub fn apply_l_raw(&self, h: &[f64]) -> Vec<f64> {
        let nu = self.nu_nodes();
        let k = self.apply_k_raw(h, KSplit::Full);
        nu.iter().zip(h).zip(&k).map(|((n, h), k)| n * h - k).collect()
    }

    /// Unprojected `Γ(h₁,h₂)` by direct quadrature.
    pub fn apply_gamma_raw(&self, h1: &[f64], h2: &[f64]) -> Vec<f64> {
        let grid = &*self.grid;
        let (jm, sj) = (grid.maxwellian(), grid.sqrt_maxwellian());
        let r1: Vec<f64> = h1.iter().zip(sj).map(|(a, b)| a / b).collect();
        let r2: Vec<f64> = h2.iter().zip(sj).map(|(a, b)| a / b).collect();
        par::map_indexed(grid.len(), |i| {
            let (p, p0) = (&grid.coords()[i], grid.energies()[i]);
            let (mut gain, mut loss) = (0.0, 0.0);
            for j in 0..grid.len() {
                let Some(pr) = self.pair(p, p0, j) else { continue };
                loss += pr.weight * sj[j] * h2[j];
                let mut ang = 0.0;
                self.angular_pass(&pr, |w, sp, sq| {
                    let a: f64 = (0..8).map(|c| r1[sp.idx[c]] * sp.w[c]).sum();
                    let b: f64 = (0..8).map(|c| r2[sq.idx[c]] * sq.w[c]).sum();
                    ang += w * a * b;
                });
                gain += pr.weight * jm[j] * ang;
            }
            sj[i] * gain - self.c_gamma * h1[i] * loss
        })
    }

    /// Row-major nodal matrices of `K` and `K^{1−χ}` plus `ν` and leakage.
    fn k_rows(&self) -> (Vec<f64>, Vec<f64>, Vec<f64>, Leakage) {
        let grid = &*self.grid;
        let n = grid.len();
        let (jm, sj) = (grid.maxwellian(), grid.sqrt_maxwellian());
        let inv_sj: Vec<f64> = sj.iter().map(|v| 1.0 / v).collect();
        let mut full = vec![0.0; n * n];
        let mut part = vec![0.0; n * n];
        let mut extra = vec![(0.0, 0.0, 0.0); n];
        {
            let extra_ptr = SyncSlice(extra.as_mut_ptr());
            let part_ptr = SyncSlice(part.as_mut_ptr());
            par::for_each_chunk(&mut full, n, |i, row| {
                // SAFETY: chunk i is the only writer of row i in `part` and of extra[i].
                let prow = unsafe { std::slice::from_raw_parts_mut(part_ptr.get().add(i * n), n) };
                let (p, p0) = (&grid.coords()[i], grid.energies()[i]);
                let (mut nu, mut leak, mut tot) = (0.0, 0.0, 0.0);
                for j in 0..n {
                    let Some(pr) = self.pair(p, p0, j) else { continue };
                    nu += pr.weight * jm[j];
                    let k1 = self.c_gamma * pr.weight * sj[i] * sj[j];
                    row[j] -= k1;
                    let om = 1.0 - pr.chi;
                    if om > 0.0 {
                        prow[j] -= om * k1;
                    }
                    let base = sj[i] * pr.weight * jm[j];
                    self.angular_pass(&pr, |w, sp, sq| {
                        let bw = base * w;
                        for c in 0..8 {
                            row[sp.idx[c]] += bw * sp.w[c] * inv_sj[sp.idx[c]];
                            row[sq.idx[c]] += bw * sq.w[c] * inv_sj[sq.idx[c]];
                        }
                        if om > 0.0 {
                            let bo = om * bw;
                            for c in 0..8 {
                                prow[sp.idx[c]] += bo * sp.w[c] * inv_sj[sp.idx[c]];
                                prow[sq.idx[c]] += bo * sq.w[c] * inv_sj[sq.idx[c]];
                            }
                        }
                        if sp.clamped || sq.clamped {
                            leak += bw;
                        }
                        tot += bw;
                    });
                }
                unsafe { *extra_ptr.get().add(i) = (nu * self.c_gamma, leak, tot) };
            });
        }
        let nu = extra.iter().map(|e| e.0).collect();
        let lk: Vec<(f64, f64)> = extra.iter().map(|e| (e.1, e.2)).collect();
        (full, part, nu, Leakage::from_rows(&lk))
    }

    /// Dense gain tensor `B[i][r][s]` with
    /// `Q₊(F,G)ᵢ = Jᵢ Σ B[i][r][s] (F/J)_r (G/J)_s`.
    pub fn gain_tensor(&self) -> Result<GainTensor> {
        let grid = &*self.grid;
        let n = grid.len();
        if n > MAX_TENSOR_NODES {
            return invalid(format!("gain tensor limited to {MAX_TENSOR_NODES} nodes, grid has {n}"));
        }
        let jm = grid.maxwellian();
        let mut data = vec![0.0; n * n * n];
        par::for_each_chunk(&mut data, n * n, |i, slab| {
            let (p, p0) = (&grid.coords()[i], grid.energies()[i]);
            for j in 0..n {
                let Some(pr) = self.pair(p, p0, j) else { continue };
                let base = pr.weight * jm[j];
                self.angular_pass(&pr, |w, sp, sq| {
                    let bw = base * w;
                    for a in 0..8 {
                        let ra = sp.idx[a] * n;
                        let wa = bw * sp.w[a];
                        for b in 0..8 {
                            slab[ra + sq.idx[b]] += wa * sq.w[b];
                        }
                    }
                });
            }
        });
        Ok(GainTensor { n, data, grid: self.grid.clone(), c_gamma: self.c_gamma })
    }
}

pub const MAX_TENSOR_NODES: usize = 343;

#[derive(Clone, Copy)]
struct SyncSlice<T>(*mut T);
unsafe impl<T> Send for SyncSlice<T> {}
unsafe impl<T> Sync for SyncSlice<T> {}
impl<T> SyncSlice<T> {
    fn get(&self) -> *mut T {
        self.0
    }
}

/// Output of [`CollisionEngine::gain_loss`].
#[derive(Clone, Debug)]
pub struct GainLoss {
    pub q_plus: Vec<f64>,
    pub q_minus: Vec<f64>,
    pub r_of_g: Vec<f64>,
    pub leakage: Leakage,
}

impl GainLoss {
    pub fn collision(&self) -> Vec<f64> {
        self.q_plus.iter().zip(&self.q_minus).map(|(a, b)| a - b).collect()
    }
}

/// Precomputed bilinear gain structure for small grids.
#[derive(Clone, Debug)]
pub struct GainTensor {
    n: usize,
    data: Vec<f64>,
    grid: Arc<MomentumGrid>,
    c_gamma: f64,
}

impl GainTensor {
    pub fn len(&self) -> usize {
        self.n
    }
    pub fn is_empty(&self) -> bool {
        self.n == 0
    }
    pub fn c_gamma(&self) -> f64 {
        self.c_gamma
    }
    pub fn grid(&self) -> &Arc<MomentumGrid> {
        &self.grid
    }

    /// `Σ_{r,s} B[i][r][s] x_r y_s` for every `i`.
    pub fn contract(&self, x: &[f64], y: &[f64]) -> Vec<f64> {
        let n = self.n;
        par::map_indexed(n, |i| {
            let slab = &self.data[i * n * n..(i + 1) * n * n];
            let mut acc = 0.0;
            for r in 0..n {
                if x[r] == 0.0 {
                    continue;
                }
                let row = &slab[r * n..(r + 1) * n];
                let s: f64 = row.iter().zip(y).map(|(b, y)| b * y).sum();
                acc += x[r] * s;
            }
            acc
        })
    }

    /// Complex contraction against a batch: column `c` of the result is
    /// `Σ B[·][r][s] Cᶜ_{rs}` where `Cᶜ` is the `c`-th `n×n` block (row-major).
    pub fn contract_batch(&self, blocks_re: &DMatrix<f64>, blocks_im: &DMatrix<f64>) -> (DMatrix<f64>, DMatrix<f64>) {
        let n = self.n;
        // data viewed column-major as (n² × n) is Bᵀ with B as (n × n²).
        let bt = nalgebra::DMatrixView::from_slice(&self.data, n * n, n);
        (bt.tr_mul(blocks_re), bt.tr_mul(blocks_im))
    }

    pub fn raw(&self) -> &[f64] {
        &self.data
    }

    /// `Q₊(F,G)` at every node.
    pub fn q_plus(&self, f: &[f64], g: &[f64]) -> Vec<f64> {
        let jm = self.grid.maxwellian();
        let x: Vec<f64> = f.iter().zip(jm).map(|(a, b)| a / b).collect();
        let y: Vec<f64> = g.iter().zip(jm).map(|(a, b)| a / b).collect();
        self.contract(&x, &y).iter().zip(jm).map(|(v, j)| v * j).collect()
    }

    /// Gain part of `Γ(h₁,h₂)`.
    pub fn gamma_gain(&self, h1: &[f64], h2: &[f64]) -> Vec<f64> {
        let sj = self.grid.sqrt_maxwellian();
        let x: Vec<f64> = h1.iter().zip(sj).map(|(a, b)| a / b).collect();
        let y: Vec<f64> = h2.iter().zip(sj).map(|(a, b)| a / b).collect();
        self.contract(&x, &y).iter().zip(sj).map(|(v, j)| v * j).collect()
    }
}

/// Collision-rate matrix `M[i][j] = c_γ w_j v_φ Φ(g)` used by loss terms.
pub fn loss_matrix(engine: &CollisionEngine) -> DMatrix<f64> {
    let grid = &**engine.grid();
    let n = grid.len();
    let rows = par::map_indexed(n, |i| {
        let (p, p0) = (&grid.coords()[i], grid.energies()[i]);
        let mut r = vec![0.0; n];
        for (j, v) in r.iter_mut().enumerate() {
            if let Some(pr) = engine.pair(p, p0, j) {
                *v = engine.c_gamma * pr.weight;
            }
        }
        r
    });
    DMatrix::from_fn(n, n, |i, j| rows[i][j])
}

/// Assembly tolerances.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct AssemblyOptions {
    /// Maximum relative antisymmetric part of the scaled `K` before symmetrization.
    pub max_defect: f64,
    /// Average over the 48 signed axis permutations of the cube.
    pub cube_average: bool,
    /// Project `L` onto the complement of the collision invariants.
    pub conservative: bool,
}

impl Default for AssemblyOptions {
    fn default() -> Self {
        Self { max_defect: 0.25, cube_average: true, conservative: true }
    }
}

/// Assembly diagnostics.
#[derive(Clone, Copy, Debug, Default, Serialize, Deserialize)]
pub struct AssemblyReport {
    /// `‖K̃ − K̃ᵀ‖_F / ‖K̃ + K̃ᵀ‖_F` of the raw scaled matrix.
    pub symmetry_defect: f64,
    /// Relative change from averaging over the cube group.
    pub cube_defect: f64,
    /// Relative size of the conservative correction to `L`.
    pub projection_correction: f64,
    /// `max |L̃ φ| / max |ν φ|` over the raw invariants before correction.
    pub raw_null_residual: f64,
    pub leakage: Leakage,
    pub nodes: usize,
    pub angular_nodes: usize,
}

/// Assembled linear operators over one grid.
///
/// Matrices act on scaled vectors `x = W^{1/2} h` (with `W` the quadrature
/// weights), so the discrete `L²_p` inner product is Euclidean.
#[derive(Clone, Debug)]
pub struct OperatorMatrices {
    pub engine: Arc<CollisionEngine>,
    pub nu: Vec<f64>,
    pub sqrt_w: Vec<f64>,
    pub l: DMatrix<f64>,
    pub k: DMatrix<f64>,
    pub k_one_minus_chi: DMatrix<f64>,
    pub k_chi: DMatrix<f64>,
    /// Orthonormal scaled basis of the collision invariants (columns).
    pub null_basis: DMatrix<f64>,
    pub report: AssemblyReport,
}

fn frob(m: &DMatrix<f64>) -> f64 {
    m.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn cube_average(m: &DMatrix<f64>, maps: &[Vec<usize>]) -> DMatrix<f64> {
    let n = m.nrows();
    let cols = par::map_indexed(n, |j| {
        let mut c = vec![0.0; n];
        for map in maps {
            let gj = map[j];
            for (i, v) in c.iter_mut().enumerate() {
                *v += m[(map[i], gj)];
            }
        }
        let inv = 1.0 / maps.len() as f64;
        c.iter_mut().for_each(|v| *v *= inv);
        c
    });
    DMatrix::from_fn(n, n, |i, j| cols[j][i])
}

fn symmetrize_scaled(raw_rows: &[f64], sqrt_w: &[f64], maps: Option<&[Vec<usize>]>) -> (DMatrix<f64>, f64, f64) {
    let n = sqrt_w.len();
    // Row-major buffer read as column-major is the transpose.
    let kt = DMatrix::from_column_slice(n, n, raw_rows);
    let ks = DMatrix::from_fn(n, n, |i, j| sqrt_w[i] * kt[(j, i)] / sqrt_w[j]);
    let anti = frob(&(&ks - ks.transpose()));
    let sym_m = (&ks + ks.transpose()) * 0.5;
    let defect = anti / (2.0 * frob(&sym_m)).max(f64::MIN_POSITIVE);
    match maps {
        Some(maps) => {
            let avg = cube_average(&sym_m, maps);
            let cd = frob(&(&avg - &sym_m)) / frob(&sym_m).max(f64::MIN_POSITIVE);
            // Restore exact symmetry after the floating-point average.
            let avg = (&avg + avg.transpose()) * 0.5;
            (avg, defect, cd)
        }
        None => (sym_m, defect, 0.0),
    }
}

/// Builds `K`, `K^{1−χ}`, `K^χ`, `ν` and `L` over `grid`.
pub fn assemble_operator_matrices(
    model: &KernelModel,
    grid: Arc<MomentumGrid>,
    rule: AngularRule,
    opts: AssemblyOptions,
) -> Result<OperatorMatrices> {
    let engine = Arc::new(CollisionEngine::new(*model, grid.clone(), rule)?);
    let n = grid.len();
    let (full, part, nu, leakage) = engine.k_rows();
    let sqrt_w: Vec<f64> = grid.quad_weights().iter().map(|w| w.sqrt()).collect();
    let maps = if opts.cube_average { Some(grid.cube_symmetries()) } else { None };
    let (k_sym, defect, cube_defect) = symmetrize_scaled(&full, &sqrt_w, maps.as_deref());
    let (k_omc, _, _) = symmetrize_scaled(&part, &sqrt_w, maps.as_deref());
    if defect > opts.max_defect {
        return Err(Error::AssemblyAccuracy(format!(
            "symmetry defect {defect:.3e} exceeds {:.3e}",
            opts.max_defect
        )));
    }
    let nu_avg: Vec<f64> = match &maps {
        Some(maps) => (0..n).map(|i| maps.iter().map(|m| nu[m[i]]).sum::<f64>() / maps.len() as f64).collect(),
        None => nu,
    };
    let mut l = -&k_sym;
    for i in 0..n {
        l[(i, i)] += nu_avg[i];
    }
    let null_basis = null_basis_scaled(&grid, &sqrt_w);
    let ln = &l * &null_basis;
    let nun = DMatrix::from_fn(n, 5, |i, c| nu_avg[i] * null_basis[(i, c)]);
    let raw_null_residual = ln.amax() / nun.amax();
    let mut projection_correction = 0.0;
    if opts.conservative {
        // L_c = (I−Π) L (I−Π) with Π = N Nᵀ.
        let lnn = &ln * null_basis.transpose();
        let nl = &null_basis * (null_basis.transpose() * &l);
        let core = &null_basis * ((null_basis.transpose() * &ln) * null_basis.transpose());
        let corr = -&lnn - &nl + &core;
        projection_correction = frob(&corr) / frob(&l);
        l += corr;
        l = (&l + l.transpose()) * 0.5;
    }
    let mut k = -&l;
    for i in 0..n {
        k[(i, i)] += nu_avg[i];
    }
    let k_chi = &k - &k_omc;
    let angular_nodes = engine.rule().len();
    Ok(OperatorMatrices {
        engine,
        nu: nu_avg,
        sqrt_w,
        l,
        k,
        k_one_minus_chi: k_omc,
        k_chi,
        null_basis,
        report: AssemblyReport {
            symmetry_defect: defect,
            cube_defect,
            projection_correction,
            raw_null_residual,
            leakage,
            nodes: n,
            angular_nodes,
        },
    })
}

impl OperatorMatrices {
    pub fn grid(&self) -> &Arc<MomentumGrid> {
        self.engine.grid()
    }
    pub fn len(&self) -> usize {
        self.nu.len()
    }
    pub fn is_empty(&self) -> bool {
        self.nu.is_empty()
    }

    pub fn to_scaled(&self, h: &[Complex64]) -> Vec<Complex64> {
        h.iter().zip(&self.sqrt_w).map(|(v, s)| v * *s).collect()
    }

    pub fn from_scaled(&self, x: &[Complex64]) -> Vec<Complex64> {
        x.iter().zip(&self.sqrt_w).map(|(v, s)| v / *s).collect()
    }

    fn apply_scaled(&self, m: &DMatrix<f64>, h: &[Complex64]) -> Result<Vec<Complex64>> {
        if h.len() != self.len() {
            return invalid(format!("expected {} nodal values, got {}", self.len(), h.len()));
        }
        let x = self.to_scaled(h);
        let xr = nalgebra::DVector::from_iterator(x.len(), x.iter().map(|v| v.re));
        let xi = nalgebra::DVector::from_iterator(x.len(), x.iter().map(|v| v.im));
        let (yr, yi) = (m * xr, m * xi);
        let y: Vec<Complex64> = yr.iter().zip(yi.iter()).map(|(a, b)| Complex64::new(*a, *b)).collect();
        Ok(self.from_scaled(&y))
    }

    pub fn apply_k(&self, h: &[Complex64], split: KSplit) -> Result<Vec<Complex64>> {
        let m = match split {
            KSplit::Full => &self.k,
            KSplit::Chi => &self.k_chi,
            KSplit::OneMinusChi => &self.k_one_minus_chi,
        };
        self.apply_scaled(m, h)
    }

    pub fn apply_l(&self, h: &[Complex64]) -> Result<Vec<Complex64>> {
        self.apply_scaled(&self.l, h)
    }

    /// `Γ(h₁,h₂)` with its component along the invariants removed.
    pub fn apply_gamma(&self, h1: &[f64], h2: &[f64]) -> Result<Vec<f64>> {
        if h1.len() != self.len() || h2.len() != self.len() {
            return invalid("Γ inputs must have one value per node");
        }
        let raw = self.engine.apply_gamma_raw(h1, h2);
        Ok(self.remove_invariants(&raw))
    }

    /// Nodal `h ↦ h − Ph` through the scaled orthonormal basis.
    pub fn remove_invariants(&self, h: &[f64]) -> Vec<f64> {
        let x = nalgebra::DVector::from_iterator(h.len(), h.iter().zip(&self.sqrt_w).map(|(v, s)| v * s));
        let c = self.null_basis.transpose() * &x;
        let y = x - &self.null_basis * c;
        y.iter().zip(&self.sqrt_w).map(|(v, s)| v / s).collect()
    }

    /// Symmetric eigenvalues of `L̃`, ascending.
    pub fn l_spectrum(&self) -> Vec<f64> {
        let e = nalgebra::SymmetricEigen::new(self.l.clone());
        let mut v: Vec<f64> = e.eigenvalues.iter().copied().collect();
        v.sort_by(|a, b| a.total_cmp(b));
        v
    }

    /// `δ₀ = min_{h ⊥ N} ⟨Lh,h⟩ / ⟨νh,h⟩`.
    pub fn coercivity_constant(&self) -> f64 {
        let n = self.len();
        let inv_sqrt_nu: Vec<f64> = self.nu.iter().map(|v| 1.0 / v.sqrt()).collect();
        let m = DMatrix::from_fn(n, n, |i, j| inv_sqrt_nu[i] * self.l[(i, j)] * inv_sqrt_nu[j]);
        // Constraint directions ν^{-1/2}N, orthonormalized.
        let c = DMatrix::from_fn(n, 5, |i, k| inv_sqrt_nu[i] * self.null_basis[(i, k)]);
        let q = c.qr().q();
        let pi = &q * q.transpose();
        let mut proj = DMatrix::<f64>::identity(n, n) - &pi;
        let pm = &proj * &m * &proj;
        let shift = 10.0 * m.amax().max(1.0);
        proj = pm + pi * shift;
        let e = nalgebra::SymmetricEigen::new((&proj + proj.transpose()) * 0.5);
        e.eigenvalues.iter().copied().fold(f64::INFINITY, f64::min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::discretization::build_grid;

    #[test]
    fn sigma_examples() {
        let soft = KernelModel::soft(1.0, 0.0).unwrap();
        assert!((sigma_eval(&soft, 2.0, 0.3).unwrap() - 0.5).abs() < 1e-15);
        let hard = KernelModel::hard(1.0, 0.0, 0.0).unwrap();
        assert!((sigma_eval(&hard, 1.0, -0.2).unwrap() - 2.0).abs() < 1e-15);
        assert!(matches!(sigma_eval(&soft, 0.0, 0.0), Err(Error::Singularity { .. })));
    }

    #[test]
    fn model_constraints() {
        assert!(KernelModel::soft(5.0, 0.0).is_err());
        assert!(KernelModel::soft(3.5, -1.0).is_err());
        assert!(KernelModel::soft(0.0, 0.0).is_err());
        assert!(KernelModel::hard(1.5, 0.0, -1.0).is_err());
        assert!(KernelModel::soft(1.0, -2.0).is_err());
        assert!((KernelModel::soft(1.0, 0.0).unwrap().zeta() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn chi_ramp() {
        let m = KernelModel::soft(1.0, 0.0).unwrap();
        assert_eq!(m.chi(0.05), 0.0);
        assert_eq!(m.chi(0.3), 1.0);
        assert!((m.chi(0.15) - 0.5).abs() < 1e-15);
    }

    #[test]
    fn split_adds_up_raw() {
        let grid = Arc::new(build_grid(4.0, 5).unwrap());
        let m = KernelModel::soft(1.0, 0.0).unwrap().with_chi_epsilon(2.0).unwrap();
        let e = CollisionEngine::new(m, grid.clone(), AngularRule::new(3, 6, 0.0).unwrap()).unwrap();
        let h: Vec<f64> = (0..grid.len()).map(|i| ((i * 7919) % 13) as f64 * 0.1 - 0.6).collect();
        let a = e.apply_k_raw(&h, KSplit::Full);
        let b = e.apply_k_raw(&h, KSplit::Chi);
        let c = e.apply_k_raw(&h, KSplit::OneMinusChi);
        for i in 0..h.len() {
            assert!((a[i] - b[i] - c[i]).abs() <= 1e-12 * a[i].abs().max(1e-3));
        }
    }
}
