//! One-dimensional quadrature: adaptive Gauss–Kronrod and Gauss–Jacobi nodes.

use crate::error::{invalid, Result};
use nalgebra::{DMatrix, SymmetricEigen};

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_18,
    0.140_653_259_715_525_92,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_83,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

fn gk15<F: Fn(f64) -> f64>(f: &F, a: f64, b: f64) -> (f64, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut k = WGK[7] * fc;
    let mut g = WG[3] * fc;
    for i in 0..7 {
        let x = h * XGK[i];
        let s = f(c - x) + f(c + x);
        k += WGK[i] * s;
        if i % 2 == 1 {
            g += WG[i / 2] * s;
        }
    }
    (k * h, ((k - g) * h).abs())
}

/// Adaptive Gauss–Kronrod integral of `f` over `[a, b]` to absolute `tol`.
pub fn integrate<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> f64 {
    let mut stack = vec![(a, b, tol, 0u32)];
    let mut total = 0.0;
    while let Some((lo, hi, t, depth)) = stack.pop() {
        let (v, err) = gk15(&f, lo, hi);
        if err <= t || depth > 40 {
            total += v;
        } else {
            let mid = 0.5 * (lo + hi);
            stack.push((mid, hi, 0.5 * t, depth + 1));
            stack.push((lo, mid, 0.5 * t, depth + 1));
        }
    }
    total
}

/// Integral of `f` over `[0, ∞)` for integrands with at least `e^{-x}` decay.
pub fn integrate_half_line<F: Fn(f64) -> f64>(f: F, tol: f64) -> f64 {
    // Split into unit-ish panels so the adaptive rule sees smooth pieces.
    let breaks = [0.0, 1.0, 2.0, 4.0, 8.0, 16.0, 32.0, 64.0, 128.0];
    breaks
        .windows(2)
        .map(|w| integrate(&f, w[0], w[1], tol / 8.0))
        .sum()
}

/// Gauss–Jacobi rule with weight `(1-x)^α (1+x)^α` on `[-1, 1]`.
///
/// Nodes come from the symmetric Jacobi matrix; weights are rescaled so they
/// sum to the exact total mass of the weight function.
pub fn gauss_jacobi_symmetric(n: usize, alpha: f64) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return invalid("Gauss–Jacobi rule needs at least one node");
    }
    if alpha <= -1.0 {
        return invalid(format!("Jacobi exponent {alpha} must exceed -1"));
    }
    let mass = symmetric_jacobi_mass(alpha);
    let mut t = DMatrix::<f64>::zeros(n, n);
    let ab = 2.0 * alpha;
    for k in 1..n {
        let kf = k as f64;
        // Off-diagonal of the monic recurrence for α = β.
        let num = 4.0 * kf * (kf + alpha) * (kf + alpha) * (kf + ab);
        let den = (2.0 * kf + ab).powi(2) * (2.0 * kf + ab + 1.0) * (2.0 * kf + ab - 1.0);
        let b2 = if k == 1 && (ab + 1.0).abs() < 1e-14 {
            // 2k+α+β-1 vanishes; take the limit for α+β = -1.
            2.0 * (1.0 + alpha) * (1.0 + alpha) / ((2.0 + ab) * (2.0 + ab) * (3.0 + ab)) * 2.0
        } else {
            num / den
        };
        let off = b2.sqrt();
        t[(k, k - 1)] = off;
        t[(k - 1, k)] = off;
    }
    let eig = SymmetricEigen::new(t);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], v0 * v0)
        })
        .collect();
    pairs.sort_by(|x, y| x.0.total_cmp(&y.0));
    // Symmetrize about 0 so odd moments vanish to rounding.
    let mut nodes: Vec<f64> = pairs.iter().map(|p| p.0).collect();
    let mut weights: Vec<f64> = pairs.iter().map(|p| p.1).collect();
    for i in 0..n / 2 {
        let j = n - 1 - i;
        let x = 0.5 * (nodes[j] - nodes[i]);
        let w = 0.5 * (weights[i] + weights[j]);
        nodes[i] = -x;
        nodes[j] = x;
        weights[i] = w;
        weights[j] = w;
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    let s: f64 = weights.iter().sum();
    for w in &mut weights {
        *w *= mass / s;
    }
    Ok((nodes, weights))
}

/// `∫_{-1}^{1} (1-x²)^α dx = √π Γ(α+1) / Γ(α+3/2)`.
pub fn symmetric_jacobi_mass(alpha: f64) -> f64 {
    use statrs::function::gamma::ln_gamma;
    (0.5 * std::f64::consts::PI.ln() + ln_gamma(alpha + 1.0) - ln_gamma(alpha + 1.5)).exp()
}

/// Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    gauss_jacobi_symmetric(n, 0.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn kronrod_polynomial_exact() {
        let v = integrate(|x| x.powi(5) - 3.0 * x * x, 0.0, 2.0, 1e-14);
        assert!((v - (64.0 / 6.0 - 8.0)).abs() < 1e-12);
    }

    #[test]
    fn half_line_exponential() {
        let v = integrate_half_line(|x| x * x * (-x).exp(), 1e-13);
        assert!((v - 2.0).abs() < 1e-11);
    }

    #[test]
    fn legendre_exactness() {
        let (x, w) = gauss_legendre(6).unwrap();
        for deg in 0..12 {
            let q: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(deg)).sum();
            let exact = if deg % 2 == 1 { 0.0 } else { 2.0 / (deg as f64 + 1.0) };
            assert!((q - exact).abs() < 1e-13, "deg {deg}: {q} vs {exact}");
        }
    }

    #[test]
    fn jacobi_half_weight_moments() {
        // α = -1/2 is Chebyshev of the first kind: ∫ x² / √(1-x²) = π/2.
        let (x, w) = gauss_jacobi_symmetric(5, -0.5).unwrap();
        let m0: f64 = w.iter().sum();
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert!((m0 - std::f64::consts::PI).abs() < 1e-12);
        assert!((m2 - std::f64::consts::FRAC_PI_2).abs() < 1e-12);
    }
}
