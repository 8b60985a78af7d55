//! Relativistic collision geometry with c = m = k_B T = 1.

use crate::error::{invalid, Error, Result};
use crate::quad1d;
use serde::{Deserialize, Serialize};
use std::sync::OnceLock;

pub type Vec3 = [f64; 3];

#[inline]
pub fn dot(a: &Vec3, b: &Vec3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

#[inline]
pub fn norm_sq(a: &Vec3) -> f64 {
    dot(a, a)
}

#[inline]
pub(crate) fn energy_raw(p: &Vec3) -> f64 {
    (1.0 + norm_sq(p)).sqrt()
}

/// A dimensionless momentum with its derived energy `p⁰ = √(1+|p|²)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Momentum3 {
    components: Vec3,
    energy: f64,
}

impl Momentum3 {
    pub const ZERO: Momentum3 = Momentum3 { components: [0.0; 3], energy: 1.0 };

    pub fn new(components: Vec3) -> Result<Self> {
        if components.iter().any(|c| !c.is_finite()) {
            return invalid(format!("non-finite momentum {components:?}"));
        }
        Ok(Self { components, energy: energy_raw(&components) })
    }

    pub(crate) fn from_raw(components: Vec3) -> Self {
        Self { components, energy: energy_raw(&components) }
    }

    pub fn components(&self) -> Vec3 {
        self.components
    }

    pub fn energy(&self) -> f64 {
        self.energy
    }

    /// Normalized velocity `p̂ = p / p⁰`.
    pub fn velocity(&self) -> Vec3 {
        let e = self.energy;
        [self.components[0] / e, self.components[1] / e, self.components[2] / e]
    }

    pub fn norm(&self) -> f64 {
        norm_sq(&self.components).sqrt()
    }
}

/// `√(1 + |p|²)`; rejects non-finite components.
pub fn energy(components: Vec3) -> Result<f64> {
    Momentum3::new(components).map(|p| p.energy())
}

/// Lorentz-invariant collision variables of a pair.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CollisionInvariants {
    pub g: f64,
    pub s: f64,
    pub moller: f64,
    pub gamma_lorentz: f64,
}

/// Pair invariants.  The radicand is evaluated as `|p−q|² − (p⁰−q⁰)²` with
/// `p⁰−q⁰` rationalized, which avoids cancellation for nearby momenta.
pub(crate) fn invariants_raw(p: &Vec3, p0: f64, q: &Vec3, q0: f64) -> (f64, f64, f64) {
    let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
    let sum = [p[0] + q[0], p[1] + q[1], p[2] + q[2]];
    let de = dot(&d, &sum) / (p0 + q0);
    let g2 = norm_sq(&d) - de * de;
    let g = g2.max(0.0).sqrt();
    let s = 2.0 * (p0 * q0 - dot(p, q) + 1.0);
    let moller = g * s.sqrt() / (p0 * q0);
    (g, s, moller)
}

pub fn relative_invariants(p: &Momentum3, q: &Momentum3) -> Result<CollisionInvariants> {
    let (pc, qc) = (p.components, q.components);
    let d = [pc[0] - qc[0], pc[1] - qc[1], pc[2] - qc[2]];
    let sum = [pc[0] + qc[0], pc[1] + qc[1], pc[2] + qc[2]];
    let de = dot(&d, &sum) / (p.energy + q.energy);
    let g2 = norm_sq(&d) - de * de;
    let tol = 64.0 * f64::EPSILON * (norm_sq(&d) + 1.0);
    if g2 < -tol {
        return Err(Error::NumericalInconsistency(format!(
            "relative-momentum radicand {g2:e} below -{tol:e}"
        )));
    }
    let (g, s, moller) = invariants_raw(&pc, p.energy, &qc, q.energy);
    let gamma_lorentz = ((p.energy + q.energy) / s.sqrt()).max(1.0);
    Ok(CollisionInvariants { g, s, moller, gamma_lorentz })
}

/// Outgoing momenta of an elastic collision and its invariant scattering angle.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PostCollision {
    pub p_out: Momentum3,
    pub q_out: Momentum3,
    pub cos_theta: f64,
}

/// Below this `|p+q|` the boost correction is dropped (its exact limit is 0).
pub const EPS_PQ: f64 = 1e-14;

/// Centre-of-momentum post-collision momenta for a unit `omega`.
#[inline]
pub(crate) fn post_collision_raw(
    p: &Vec3,
    p0: f64,
    q: &Vec3,
    q0: f64,
    g: f64,
    s: f64,
    omega: &Vec3,
) -> (Vec3, Vec3) {
    let tot = [p[0] + q[0], p[1] + q[1], p[2] + q[2]];
    let tn2 = norm_sq(&tot);
    let coef = if tn2.sqrt() < EPS_PQ {
        0.0
    } else {
        let gl = (p0 + q0) / s.sqrt();
        (gl - 1.0) * dot(&tot, omega) / tn2
    };
    let hg = 0.5 * g;
    let mut po = [0.0; 3];
    let mut qo = [0.0; 3];
    for i in 0..3 {
        let v = hg * (omega[i] + coef * tot[i]);
        po[i] = 0.5 * tot[i] + v;
        qo[i] = 0.5 * tot[i] - v;
    }
    (po, qo)
}

/// Invariant scattering-angle cosine from pre and post relative four-momenta.
pub(crate) fn cos_theta_raw(
    p: &Vec3,
    p0: f64,
    q: &Vec3,
    q0: f64,
    po: &Vec3,
    qo: &Vec3,
    g: f64,
) -> f64 {
    if g == 0.0 {
        return 1.0;
    }
    let d = [p[0] - q[0], p[1] - q[1], p[2] - q[2]];
    let dn = [po[0] - qo[0], po[1] - qo[1], po[2] - qo[2]];
    let de = p0 - q0;
    let den = energy_raw(po) - energy_raw(qo);
    ((dot(&d, &dn) - de * den) / (g * g)).clamp(-1.0, 1.0)
}

pub fn post_collision(p: &Momentum3, q: &Momentum3, omega: Vec3) -> Result<PostCollision> {
    if omega.iter().any(|c| !c.is_finite()) || (norm_sq(&omega).sqrt() - 1.0).abs() > 1e-12 {
        return invalid(format!("omega {omega:?} is not a unit vector"));
    }
    let inv = relative_invariants(p, q)?;
    let (pc, qc) = (p.components, q.components);
    if inv.g == 0.0 {
        return Ok(PostCollision { p_out: *p, q_out: *q, cos_theta: 1.0 });
    }
    let (po, qo) = post_collision_raw(&pc, p.energy, &qc, q.energy, inv.g, inv.s, &omega);
    let cos_theta = cos_theta_raw(&pc, p.energy, &qc, q.energy, &po, &qo, inv.g);
    Ok(PostCollision { p_out: Momentum3::from_raw(po), q_out: Momentum3::from_raw(qo), cos_theta })
}

/// Centre-of-momentum direction of `p` (unit vector `k` with `cosθ = k·ω`).
///
/// Returns `None` when `g = 0`.
pub(crate) fn cm_direction(p: &Vec3, p0: f64, q: &Vec3, q0: f64, g: f64, s: f64) -> Option<Vec3> {
    if g <= 0.0 {
        return None;
    }
    let tot = [p[0] + q[0], p[1] + q[1], p[2] + q[2]];
    let tn2 = norm_sq(&tot);
    let e = p0 + q0;
    let rs = s.sqrt();
    let gl = e / rs;
    let mut k = *p;
    if tn2.sqrt() >= EPS_PQ {
        let c = (gl - 1.0) * dot(p, &tot) / tn2 - gl * p0 / e;
        for i in 0..3 {
            k[i] += c * tot[i];
        }
    }
    let n = norm_sq(&k).sqrt();
    if n == 0.0 {
        return None;
    }
    Some([k[0] / n, k[1] / n, k[2] / n])
}

/// Jüttner normalization convention.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum JuttnerMode {
    /// `e^{-p⁰} / (4π)`.
    FourPi,
    /// `e^{-p⁰} / Z` with `Z = ∫ e^{-p⁰} dp`.
    Normalized,
}

/// `Z = 4π ∫₀^∞ r² e^{-√(1+r²)} dr`, computed once.
pub fn juttner_partition() -> f64 {
    static Z: OnceLock<f64> = OnceLock::new();
    *Z.get_or_init(|| {
        4.0 * std::f64::consts::PI
            * quad1d::integrate_half_line(|r| r * r * (-(1.0 + r * r).sqrt()).exp(), 1e-14)
    })
}

pub fn juttner(p: &Momentum3, mode: JuttnerMode) -> f64 {
    let z = match mode {
        JuttnerMode::FourPi => 4.0 * std::f64::consts::PI,
        JuttnerMode::Normalized => juttner_partition(),
    };
    (-p.energy).exp() / z
}

/// Momentum and temporal weight orders.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightSpec {
    pub ell: f64,
    pub b_exponent: f64,
    pub decay_order: f64,
}

impl WeightSpec {
    pub fn new(ell: f64, b_exponent: f64, decay_order: f64) -> Result<Self> {
        if !(ell.is_finite() && b_exponent.is_finite() && decay_order.is_finite()) {
            return invalid("weight orders must be finite");
        }
        if decay_order < 0.0 {
            return invalid(format!("decay order {decay_order} must be nonnegative"));
        }
        Ok(Self { ell, b_exponent, decay_order })
    }

    /// `w_ℓ` from an energy value.
    #[inline]
    pub fn momentum_weight(&self, energy: f64) -> f64 {
        energy.powf(self.ell * self.b_exponent / 2.0)
    }

    /// `ϖ_k(t) = (1+t)^k`.
    #[inline]
    pub fn time_weight(&self, t: f64) -> f64 {
        (1.0 + t).powf(self.decay_order)
    }
}

/// Returns `(w_ℓ(p), ϖ_k(t))`.
pub fn weights(spec: &WeightSpec, p: &Momentum3, t: f64) -> Result<(f64, f64)> {
    if !(t >= 0.0) {
        return invalid(format!("time {t} must be nonnegative"));
    }
    Ok((spec.momentum_weight(p.energy), spec.time_weight(t)))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn m(c: Vec3) -> Momentum3 {
        Momentum3::new(c).unwrap()
    }

    #[test]
    fn energies() {
        assert_eq!(energy([0.0; 3]).unwrap(), 1.0);
        assert!((energy([1.0, 0.0, 0.0]).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        assert!((energy([3.0, 4.0, 0.0]).unwrap() - 26f64.sqrt()).abs() < 1e-14);
        assert!(energy([f64::NAN, 0.0, 0.0]).is_err());
    }

    #[test]
    fn head_on_pair() {
        let inv = relative_invariants(&m([1.0, 0.0, 0.0]), &m([-1.0, 0.0, 0.0])).unwrap();
        assert!((inv.g - 2.0).abs() < 1e-14);
        assert!((inv.s - 8.0).abs() < 1e-14);
        assert!((inv.moller - 2.0 * 2f64.sqrt()).abs() < 1e-14);
        assert_eq!(inv.gamma_lorentz, 1.0);
        let pc = post_collision(&m([1.0, 0.0, 0.0]), &m([-1.0, 0.0, 0.0]), [0.0, 0.0, 1.0]).unwrap();
        let po = pc.p_out.components();
        assert!((po[2] - 1.0).abs() < 1e-14 && po[0].abs() < 1e-14);
        assert!(pc.cos_theta.abs() < 1e-14);
    }

    #[test]
    fn identical_pair_fixed() {
        let p = m([0.3, 0.0, 0.0]);
        let inv = relative_invariants(&p, &p).unwrap();
        assert_eq!(inv.g, 0.0);
        assert!((inv.s - 4.0).abs() < 1e-15);
        let pc = post_collision(&p, &p, [0.0, 1.0, 0.0]).unwrap();
        assert_eq!(pc.p_out, p);
        assert_eq!(pc.cos_theta, 1.0);
    }

    #[test]
    fn non_unit_omega_rejected() {
        assert!(post_collision(&Momentum3::ZERO, &m([1.0, 0.0, 0.0]), [1.0, 1.0, 0.0]).is_err());
    }

    #[test]
    fn weight_values() {
        let w = WeightSpec::new(2.0, 1.0, 0.0).unwrap();
        let (a, b) = weights(&w, &m([3.0, 4.0, 0.0]), 3.0).unwrap();
        assert!((a - 26f64.sqrt()).abs() < 1e-13);
        assert_eq!(b, 1.0);
        assert!(weights(&w, &Momentum3::ZERO, -1.0).is_err());
    }

    #[test]
    fn four_pi_mode_origin() {
        let v = juttner(&Momentum3::ZERO, JuttnerMode::FourPi);
        assert!((v - (-1f64).exp() / (4.0 * std::f64::consts::PI)).abs() < 1e-17);
    }
}
