//! Tensor momentum grids, sphere rules and discrete integration.

use crate::error::{invalid, Result};
use crate::kinematics::{energy_raw, juttner_partition, Momentum3, Vec3};
use crate::quad1d;
use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Uniform tensor grid on `[-p_max, p_max]³` with trapezoidal weights.
#[derive(Clone, Debug)]
pub struct MomentumGrid {
    p_max: f64,
    n: usize,
    spacing: f64,
    nodes: Vec<Momentum3>,
    coords: Vec<Vec3>,
    energies: Vec<f64>,
    quad_weights: Vec<f64>,
    maxwellian: Vec<f64>,
    sqrt_maxwellian: Vec<f64>,
    z_grid: f64,
}

/// Accuracy diagnostics of a grid against the continuum Jüttner state.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
pub struct GridDiagnostics {
    /// `|Σ w e^{-p⁰} / Z − 1|`, i.e. the error in `∫J` before renormalizing.
    pub tol_grid: f64,
    /// Continuum mass of `J` outside the inscribed ball `|p| ≤ p_max`.
    pub tail_bound: f64,
    /// Same for the perturbation scale `√J`, normalized by `∫ √J`.
    pub sqrt_tail_bound: f64,
}

pub fn build_grid(p_max: f64, n_per_axis: usize) -> Result<MomentumGrid> {
    MomentumGrid::new(p_max, n_per_axis)
}

impl MomentumGrid {
    pub fn new(p_max: f64, n: usize) -> Result<Self> {
        if !(p_max.is_finite() && p_max > 0.0) {
            return invalid(format!("p_max {p_max} must be positive"));
        }
        if n < 5 || n % 2 == 0 {
            return invalid(format!("n_per_axis {n} must be odd and at least 5"));
        }
        let spacing = 2.0 * p_max / (n - 1) as f64;
        let c = (n as i64 - 1) / 2;
        let axis: Vec<f64> = (0..n as i64).map(|i| spacing * (i - c) as f64).collect();
        let end = |i: usize| if i == 0 || i == n - 1 { 0.5 } else { 1.0 };
        let total = n * n * n;
        let mut coords = Vec::with_capacity(total);
        let mut quad_weights = Vec::with_capacity(total);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    coords.push([axis[i], axis[j], axis[k]]);
                    quad_weights.push(spacing.powi(3) * end(i) * end(j) * end(k));
                }
            }
        }
        let nodes: Vec<Momentum3> = coords.iter().map(|c| Momentum3::from_raw(*c)).collect();
        let energies: Vec<f64> = coords.iter().map(energy_raw).collect();
        // Kahan-free but fixed-order sum; deterministic by construction.
        let z_grid: f64 = energies.iter().zip(&quad_weights).map(|(e, w)| w * (-e).exp()).sum();
        let maxwellian: Vec<f64> = energies.iter().map(|e| (-e).exp() / z_grid).collect();
        let sqrt_maxwellian = maxwellian.iter().map(|m| m.sqrt()).collect();
        Ok(Self {
            p_max,
            n,
            spacing,
            nodes,
            coords,
            energies,
            quad_weights,
            maxwellian,
            sqrt_maxwellian,
            z_grid,
        })
    }

    pub fn p_max(&self) -> f64 {
        self.p_max
    }
    pub fn n_per_axis(&self) -> usize {
        self.n
    }
    pub fn spacing(&self) -> f64 {
        self.spacing
    }
    pub fn len(&self) -> usize {
        self.coords.len()
    }
    pub fn is_empty(&self) -> bool {
        self.coords.is_empty()
    }
    pub fn nodes(&self) -> &[Momentum3] {
        &self.nodes
    }
    pub fn coords(&self) -> &[Vec3] {
        &self.coords
    }
    pub fn energies(&self) -> &[f64] {
        &self.energies
    }
    pub fn quad_weights(&self) -> &[f64] {
        &self.quad_weights
    }
    /// Discretely normalized Jüttner values `e^{-p⁰} / Σ w e^{-p⁰}`.
    pub fn maxwellian(&self) -> &[f64] {
        &self.maxwellian
    }
    pub fn sqrt_maxwellian(&self) -> &[f64] {
        &self.sqrt_maxwellian
    }
    pub fn z_grid(&self) -> f64 {
        self.z_grid
    }

    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    pub fn axis_indices(&self, idx: usize) -> [usize; 3] {
        let n = self.n;
        [idx / (n * n), (idx / n) % n, idx % n]
    }

    /// Index of the node `-p`.
    pub fn mirror(&self, idx: usize) -> usize {
        let [i, j, k] = self.axis_indices(idx);
        let m = self.n - 1;
        self.index(m - i, m - j, m - k)
    }

    pub fn origin_index(&self) -> usize {
        let c = (self.n - 1) / 2;
        self.index(c, c, c)
    }

    pub fn diagnostics(&self) -> GridDiagnostics {
        let z = juttner_partition();
        let r0 = self.p_max;
        let tail = |f: &dyn Fn(f64) -> f64| {
            4.0 * PI * (quad1d::integrate(|u| f(r0 + u), 0.0, 8.0 * r0 + 200.0, 1e-16))
        };
        let tail_j = tail(&|r: f64| r * r * (-(1.0f64 + r * r).sqrt()).exp()) / z;
        let half = |r: f64| r * r * (-(1.0f64 + r * r).sqrt() / 2.0).exp();
        let sq_total = 4.0 * PI * quad1d::integrate_half_line(half, 1e-14);
        let tail_s = tail(&half) / sq_total;
        GridDiagnostics { tol_grid: (self.z_grid / z - 1.0).abs(), tail_bound: tail_j, sqrt_tail_bound: tail_s }
    }

    /// `Σ wᵢ vᵢ` in node order.
    pub fn integrate(&self, values: &[f64]) -> Result<f64> {
        self.check_len(values.len())?;
        Ok(values.iter().zip(&self.quad_weights).map(|(v, w)| w * v).sum())
    }

    pub fn integrate_complex(&self, values: &[Complex64]) -> Result<Complex64> {
        self.check_len(values.len())?;
        Ok(values.iter().zip(&self.quad_weights).map(|(v, w)| v * *w).sum())
    }

    /// Discrete `L²_p` inner product `Σ w h₁ conj(h₂)`.
    pub fn inner(&self, h1: &[Complex64], h2: &[Complex64]) -> Complex64 {
        h1.iter().zip(h2).zip(&self.quad_weights).map(|((a, b), w)| a * b.conj() * *w).sum()
    }

    pub fn norm_sq(&self, h: &[Complex64]) -> f64 {
        h.iter().zip(&self.quad_weights).map(|(a, w)| a.norm_sqr() * w).sum()
    }

    pub fn norm_sq_real(&self, h: &[f64]) -> f64 {
        h.iter().zip(&self.quad_weights).map(|(a, w)| a * a * w).sum()
    }

    fn check_len(&self, len: usize) -> Result<()> {
        if len != self.len() {
            return invalid(format!("expected {} nodal values, got {len}", self.len()));
        }
        Ok(())
    }

    /// Trilinear stencil at an arbitrary point, clamped to the hull.
    #[inline]
    pub fn stencil(&self, x: &Vec3) -> Stencil {
        let n = self.n;
        let mut base = [0usize; 3];
        let mut frac = [0f64; 3];
        let mut clamped = false;
        for a in 0..3 {
            let u = (x[a] + self.p_max) / self.spacing;
            let top = (n - 1) as f64;
            let uc = if u < 0.0 {
                clamped = true;
                0.0
            } else if u > top {
                clamped = true;
                top
            } else {
                u
            };
            let i0 = (uc.floor() as usize).min(n - 2);
            base[a] = i0;
            frac[a] = uc - i0 as f64;
        }
        let mut idx = [0usize; 8];
        let mut w = [0f64; 8];
        let b = self.index(base[0], base[1], base[2]);
        let (s0, s1) = (n * n, n);
        for c in 0..8 {
            let (di, dj, dk) = ((c >> 2) & 1, (c >> 1) & 1, c & 1);
            idx[c] = b + di * s0 + dj * s1 + dk;
            let fx = if di == 1 { frac[0] } else { 1.0 - frac[0] };
            let fy = if dj == 1 { frac[1] } else { 1.0 - frac[1] };
            let fz = if dk == 1 { frac[2] } else { 1.0 - frac[2] };
            w[c] = fx * fy * fz;
        }
        Stencil { idx, w, clamped }
    }

    /// Trilinear interpolation of nodal values.
    pub fn interpolate(&self, values: &[f64], x: &Vec3) -> f64 {
        let s = self.stencil(x);
        s.idx.iter().zip(&s.w).map(|(i, w)| values[*i] * w).sum()
    }

    /// Node permutations realizing the 48 signed axis permutations of the cube.
    pub fn cube_symmetries(&self) -> Vec<Vec<usize>> {
        let perms = [[0, 1, 2], [0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]];
        let m = self.n - 1;
        let mut out = Vec::with_capacity(48);
        for perm in perms {
            for signs in 0..8u32 {
                let map: Vec<usize> = (0..self.len())
                    .map(|idx| {
                        let a = self.axis_indices(idx);
                        let mut b = [0usize; 3];
                        for t in 0..3 {
                            let v = a[perm[t]];
                            b[t] = if (signs >> t) & 1 == 1 { m - v } else { v };
                        }
                        self.index(b[0], b[1], b[2])
                    })
                    .collect();
                out.push(map);
            }
        }
        out
    }

    /// Node map of the rotation exchanging the first two axes.
    pub fn swap12(&self) -> Vec<usize> {
        (0..self.len())
            .map(|idx| {
                let [i, j, k] = self.axis_indices(idx);
                self.index(j, i, k)
            })
            .collect()
    }
}

/// Eight-point trilinear stencil.
#[derive(Clone, Copy, Debug)]
pub struct Stencil {
    pub idx: [usize; 8],
    pub w: [f64; 8],
    /// The point fell outside the grid hull and was projected onto it.
    pub clamped: bool,
}

/// Quadrature rule on the unit sphere.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct SphereRule {
    pub nodes: Vec<Vec3>,
    pub weights: Vec<f64>,
    /// Polynomial degree integrated exactly.
    pub degree: usize,
}

pub const MAX_SPHERE_ORDER: usize = 64;

/// Gauss–Legendre in the polar cosine times `2·order` uniform azimuths.
pub fn sphere_rule(order: usize) -> Result<SphereRule> {
    if order == 0 || order > MAX_SPHERE_ORDER {
        return invalid(format!("sphere order {order} outside 1..={MAX_SPHERE_ORDER}"));
    }
    let (x, w) = quad1d::gauss_legendre(order)?;
    let n_phi = 2 * order;
    let mut nodes = Vec::with_capacity(order * n_phi);
    let mut weights = Vec::with_capacity(order * n_phi);
    for (c, wc) in x.iter().zip(&w) {
        let s = (1.0 - c * c).max(0.0).sqrt();
        for j in 0..n_phi {
            let phi = 2.0 * PI * (j as f64 + 0.5) / n_phi as f64;
            nodes.push([s * phi.cos(), s * phi.sin(), *c]);
            weights.push(wc * 2.0 * PI / n_phi as f64);
        }
    }
    Ok(SphereRule { nodes, weights, degree: 2 * order - 1 })
}

/// Product rule in the scattering angle relative to a pole, with the
/// angular factor `sin^γ θ` folded into the weights.
#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct AngularRule {
    pub cos_theta: Vec<f64>,
    pub sin_theta: Vec<f64>,
    pub cos_phi: Vec<f64>,
    pub sin_phi: Vec<f64>,
    pub weights: Vec<f64>,
    pub angular_exponent: f64,
}

impl AngularRule {
    /// `n_theta` Gauss–Jacobi nodes in `cosθ` (weight `(1−x²)^{γ/2}`) times
    /// `n_phi` uniform azimuths.  Weights sum to `c_γ = ∫_{S²} sin^γθ dω`.
    pub fn new(n_theta: usize, n_phi: usize, angular_exponent: f64) -> Result<Self> {
        if n_phi == 0 {
            return invalid("azimuth count must be positive");
        }
        if !(angular_exponent > -2.0) {
            return invalid(format!("angular exponent {angular_exponent} must exceed -2"));
        }
        let (x, w) = quad1d::gauss_jacobi_symmetric(n_theta, angular_exponent / 2.0)?;
        let mut r = AngularRule {
            cos_theta: vec![],
            sin_theta: vec![],
            cos_phi: vec![],
            sin_phi: vec![],
            weights: vec![],
            angular_exponent,
        };
        for (c, wc) in x.iter().zip(&w) {
            for j in 0..n_phi {
                let phi = 2.0 * PI * (j as f64 + 0.5) / n_phi as f64;
                r.cos_theta.push(*c);
                r.sin_theta.push((1.0 - c * c).max(0.0).sqrt());
                r.cos_phi.push(phi.cos());
                r.sin_phi.push(phi.sin());
                r.weights.push(wc * 2.0 * PI / n_phi as f64);
            }
        }
        Ok(r)
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }
    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// `∫_{S²} sin^γθ dω = 2π √π Γ(γ/2+1) / Γ(γ/2+3/2)`.
pub fn angular_mass(angular_exponent: f64) -> f64 {
    2.0 * PI * quad1d::symmetric_jacobi_mass(angular_exponent / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn construction() {
        let g = build_grid(8.0, 5).unwrap();
        assert_eq!(g.len(), 125);
        assert!(g.coords().iter().any(|c| *c == [0.0; 3]));
        assert_eq!(g.coords()[g.origin_index()], [0.0; 3]);
        assert!(build_grid(8.0, 6).is_err());
        assert!(build_grid(8.0, 3).is_err());
        assert!(build_grid(-1.0, 5).is_err());
    }

    #[test]
    fn mirror_symmetry() {
        let g = build_grid(4.0, 7).unwrap();
        for i in 0..g.len() {
            let m = g.mirror(i);
            let (a, b) = (g.coords()[i], g.coords()[m]);
            assert_eq!([a[0], a[1], a[2]], [-b[0], -b[1], -b[2]]);
            assert_eq!(g.quad_weights()[i], g.quad_weights()[m]);
        }
    }

    #[test]
    fn constant_integrand() {
        let g = build_grid(3.0, 9).unwrap();
        let v = g.integrate(&vec![1.0; g.len()]).unwrap();
        assert!((v - 216.0).abs() < 1e-11);
        assert!(g.integrate(&[1.0]).is_err());
    }

    #[test]
    fn stencil_reproduces_linear() {
        let g = build_grid(4.0, 9).unwrap();
        let f: Vec<f64> = g.coords().iter().map(|c| 1.0 + 2.0 * c[0] - c[1] + 0.5 * c[2]).collect();
        let x = [0.37, -1.91, 2.2];
        let v = g.interpolate(&f, &x);
        assert!((v - (1.0 + 0.74 + 1.91 + 1.1)).abs() < 1e-12);
        let s = g.stencil(&[5.0, 0.0, 0.0]);
        assert!(s.clamped);
        assert!((s.w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
    }

    #[test]
    fn cube_group_is_closed() {
        let g = build_grid(2.0, 5).unwrap();
        let maps = g.cube_symmetries();
        assert_eq!(maps.len(), 48);
        for m in &maps {
            let mut seen = vec![false; g.len()];
            for &j in m {
                seen[j] = true;
            }
            assert!(seen.iter().all(|s| *s));
        }
    }

    #[test]
    fn sphere_constants() {
        let r = sphere_rule(8).unwrap();
        let s: f64 = r.weights.iter().sum();
        assert!((s - 4.0 * PI).abs() < 1e-12);
        for a in 0..3 {
            let m: f64 = r.nodes.iter().zip(&r.weights).map(|(n, w)| n[a] * w).sum();
            assert!(m.abs() < 1e-12);
        }
        assert!(sphere_rule(0).is_err());
        assert!(sphere_rule(65).is_err());
    }

    #[test]
    fn angular_rule_mass() {
        for gamma in [0.0, -1.0, 0.5, 1.0] {
            let r = AngularRule::new(6, 8, gamma).unwrap();
            let s: f64 = r.weights.iter().sum();
            assert!((s - angular_mass(gamma)).abs() < 1e-12, "γ={gamma}");
        }
        assert!((angular_mass(0.0) - 4.0 * PI).abs() < 1e-12);
        assert!((angular_mass(-1.0) - 2.0 * PI * PI).abs() < 1e-12);
    }
}
