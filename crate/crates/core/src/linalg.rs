//! Split real/imaginary dense complex matrices.
//!
//! Complex gemm in nalgebra is far slower than real gemm, so complex
//! products are formed from three real products.

use crate::error::{Error, Result};
use nalgebra::{DMatrix, DVector};
use num_complex::Complex64;

#[derive(Clone, Debug)]
pub struct SplitMatrix {
    pub re: DMatrix<f64>,
    pub im: DMatrix<f64>,
}

impl SplitMatrix {
    pub fn zeros(r: usize, c: usize) -> Self {
        Self { re: DMatrix::zeros(r, c), im: DMatrix::zeros(r, c) }
    }

    pub fn identity(n: usize) -> Self {
        Self { re: DMatrix::identity(n, n), im: DMatrix::zeros(n, n) }
    }

    pub fn from_real(re: DMatrix<f64>) -> Self {
        let (r, c) = re.shape();
        Self { re, im: DMatrix::zeros(r, c) }
    }

    /// Columns are the given complex vectors.
    pub fn from_columns(cols: &[Vec<Complex64>]) -> Self {
        let n = cols.first().map_or(0, |c| c.len());
        Self {
            re: DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i].re),
            im: DMatrix::from_fn(n, cols.len(), |i, j| cols[j][i].im),
        }
    }

    pub fn column(&self, j: usize) -> Vec<Complex64> {
        (0..self.re.nrows()).map(|i| Complex64::new(self.re[(i, j)], self.im[(i, j)])).collect()
    }

    pub fn nrows(&self) -> usize {
        self.re.nrows()
    }
    pub fn ncols(&self) -> usize {
        self.re.ncols()
    }

    pub fn mul(&self, o: &SplitMatrix) -> SplitMatrix {
        let t1 = &self.re * &o.re;
        let t2 = &self.im * &o.im;
        let t3 = (&self.re + &self.im) * (&o.re + &o.im);
        let im = t3 - &t1 - &t2;
        SplitMatrix { re: t1 - t2, im }
    }

    /// Product with a real right factor.
    pub fn mul_real(&self, o: &DMatrix<f64>) -> SplitMatrix {
        SplitMatrix { re: &self.re * o, im: &self.im * o }
    }

    /// Product `o · self` with a real left factor.
    pub fn mul_real_left(&self, o: &DMatrix<f64>) -> SplitMatrix {
        SplitMatrix { re: o * &self.re, im: o * &self.im }
    }

    pub fn add(&self, o: &SplitMatrix) -> SplitMatrix {
        SplitMatrix { re: &self.re + &o.re, im: &self.im + &o.im }
    }

    pub fn scale(&self, s: f64) -> SplitMatrix {
        SplitMatrix { re: &self.re * s, im: &self.im * s }
    }

    pub fn add_identity(&mut self, s: f64) {
        for i in 0..self.re.nrows().min(self.re.ncols()) {
            self.re[(i, i)] += s;
        }
    }

    /// Maximum absolute column sum.
    pub fn norm1(&self) -> f64 {
        (0..self.ncols())
            .map(|j| (0..self.nrows()).map(|i| self.re[(i, j)].hypot(self.im[(i, j)])).sum::<f64>())
            .fold(0.0, f64::max)
    }

    pub fn matvec(&self, x: &[Complex64]) -> Vec<Complex64> {
        let xr = DVector::from_iterator(x.len(), x.iter().map(|v| v.re));
        let xi = DVector::from_iterator(x.len(), x.iter().map(|v| v.im));
        let yr = &self.re * &xr - &self.im * &xi;
        let yi = &self.re * &xi + &self.im * &xr;
        yr.iter().zip(yi.iter()).map(|(a, b)| Complex64::new(*a, *b)).collect()
    }

    pub fn to_complex(&self) -> DMatrix<Complex64> {
        DMatrix::from_fn(self.nrows(), self.ncols(), |i, j| Complex64::new(self.re[(i, j)], self.im[(i, j)]))
    }
}

/// Taylor degree of the scaled exponential (Paterson–Stockmeyer, blocks of 4).
const TAYLOR_DEGREE: usize = 16;
const SCALE_TARGET: f64 = 0.5;

/// `e^{A}` by scaling and squaring with a degree-16 Taylor polynomial.
pub fn expm(a: &SplitMatrix) -> SplitMatrix {
    let n = a.nrows();
    let nrm = a.norm1();
    let s = if nrm > SCALE_TARGET { (nrm / SCALE_TARGET).log2().ceil() as i32 } else { 0 };
    let x = a.scale(0.5f64.powi(s));
    // Powers X, X², X³, X⁴.
    let x2 = x.mul(&x);
    let x3 = x2.mul(&x);
    let x4 = x2.mul(&x2);
    let pw = [SplitMatrix::identity(n), x, x2, x3];
    let mut coef = [0f64; TAYLOR_DEGREE + 1];
    coef[0] = 1.0;
    for k in 1..=TAYLOR_DEGREE {
        coef[k] = coef[k - 1] / k as f64;
    }
    let block = |b: usize| {
        let mut acc = SplitMatrix::zeros(n, n);
        for (j, p) in pw.iter().enumerate() {
            let k = 4 * b + j;
            if k <= TAYLOR_DEGREE {
                acc = acc.add(&p.scale(coef[k]));
            }
        }
        acc
    };
    // Horner in X⁴ over blocks 4..0; block 4 holds only the X¹⁶ term.
    let mut r = SplitMatrix::identity(n).scale(coef[16]);
    for b in (0..4).rev() {
        r = r.mul(&x4).add(&block(b));
    }
    for _ in 0..s {
        r = r.mul(&r);
    }
    r
}

/// One classical Runge–Kutta step of `ẋ = A x` for a batch of columns.
pub fn rk4_step(apply: &dyn Fn(&SplitMatrix) -> SplitMatrix, x: &SplitMatrix, dt: f64) -> SplitMatrix {
    let k1 = apply(x);
    let k2 = apply(&x.add(&k1.scale(0.5 * dt)));
    let k3 = apply(&x.add(&k2.scale(0.5 * dt)));
    let k4 = apply(&x.add(&k3.scale(dt)));
    let inc = k1.add(&k2.scale(2.0)).add(&k3.scale(2.0)).add(&k4).scale(dt / 6.0);
    x.add(&inc)
}

/// Diagonalization `A = V Λ V⁻¹` via complex Schur form and back substitution.
pub struct EigenPropagator {
    pub eigenvalues: Vec<Complex64>,
    vecs: DMatrix<Complex64>,
    lu: nalgebra::LU<Complex64, nalgebra::Dyn, nalgebra::Dyn>,
    pub condition_estimate: f64,
}

impl EigenPropagator {
    pub fn new(a: &DMatrix<Complex64>) -> Result<Self> {
        let n = a.nrows();
        let schur = nalgebra::Schur::try_new(a.clone(), 1e-15, 10_000)
            .ok_or_else(|| Error::NumericalInconsistency("Schur iteration did not converge".into()))?;
        let (q, t) = schur.unpack();
        let lambda: Vec<Complex64> = (0..n).map(|i| t[(i, i)]).collect();
        let scale = t.iter().map(|v| v.norm()).fold(0.0, f64::max).max(1.0);
        let smin = 1e-14 * scale;
        // Eigenvectors of the upper-triangular T.
        let mut y = DMatrix::<Complex64>::zeros(n, n);
        for k in 0..n {
            y[(k, k)] = Complex64::new(1.0, 0.0);
            for i in (0..k).rev() {
                let mut s = Complex64::new(0.0, 0.0);
                for j in i + 1..=k {
                    s += t[(i, j)] * y[(j, k)];
                }
                let mut d = t[(i, i)] - lambda[k];
                if d.norm() < smin {
                    d = Complex64::new(smin, 0.0);
                }
                y[(i, k)] = -s / d;
            }
            let nrm = y.column(k).norm();
            y.column_mut(k).scale_mut(1.0 / nrm);
        }
        let vecs = q * y;
        let lu = vecs.clone().lu();
        let inv = lu.try_inverse().ok_or_else(|| Error::NumericalInconsistency("eigenvector matrix singular".into()))?;
        let norm1 = |m: &DMatrix<Complex64>| {
            (0..m.ncols()).map(|j| m.column(j).iter().map(|v| v.norm()).sum::<f64>()).fold(0.0, f64::max)
        };
        let condition_estimate = norm1(&vecs) * norm1(&inv);
        Ok(Self { eigenvalues: lambda, vecs, lu, condition_estimate })
    }

    /// `e^{At} x`.
    pub fn propagate(&self, x: &[Complex64], t: f64) -> Vec<Complex64> {
        let b = DVector::from_column_slice(x);
        let c = self.lu.solve(&b).expect("factorization checked at construction");
        let ec = DVector::from_iterator(c.len(), c.iter().zip(&self.eigenvalues).map(|(c, l)| c * (l * t).exp()));
        (&self.vecs * ec).iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn expm_of_rotation_generator() {
        let mut a = SplitMatrix::zeros(2, 2);
        a.re[(0, 1)] = -3.0;
        a.re[(1, 0)] = 3.0;
        let e = expm(&a);
        assert!((e.re[(0, 0)] - 3f64.cos()).abs() < 1e-13);
        assert!((e.re[(1, 0)] - 3f64.sin()).abs() < 1e-13);
    }

    #[test]
    fn expm_of_imaginary_diagonal() {
        let mut a = SplitMatrix::zeros(2, 2);
        a.re[(0, 0)] = -5.0;
        a.im[(0, 0)] = 2.0;
        a.im[(1, 1)] = -40.0;
        let e = expm(&a);
        let z = (Complex64::new(-5.0, 2.0)).exp();
        assert!((e.re[(0, 0)] - z.re).abs() < 1e-14 && (e.im[(0, 0)] - z.im).abs() < 1e-14);
        assert!((e.re[(1, 1)] - 40f64.cos()).abs() < 1e-12);
    }

    #[test]
    fn eigen_propagator_matches_expm() {
        let n = 6;
        let a = SplitMatrix {
            re: DMatrix::from_fn(n, n, |i, j| if i == j { -(i as f64) - 1.0 } else { 0.1 / (1.0 + (i + 2 * j) as f64) }),
            im: DMatrix::from_fn(n, n, |i, j| if i == j { 0.3 * i as f64 } else { 0.0 }),
        };
        let ep = EigenPropagator::new(&a.to_complex()).unwrap();
        let x: Vec<Complex64> = (0..n).map(|i| Complex64::new(1.0 + i as f64, -0.5)).collect();
        let y1 = ep.propagate(&x, 0.7);
        let y2 = expm(&a.scale(0.7)).matvec(&x);
        for (u, v) in y1.iter().zip(&y2) {
            assert!((u - v).norm() < 1e-12);
        }
    }
}
