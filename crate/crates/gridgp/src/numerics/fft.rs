//! Unitary 2-D discrete Fourier transforms on row-major complex grids.
//!
//! Both transform directions carry the same `1/sqrt(m1*m2)` factor, so the
//! transform is its own inverse up to conjugation and Parseval holds exactly.
//! Sizes are arbitrary; the planner falls back to Bluestein for awkward ones.

use rustfft::num_complex::Complex64;
use rustfft::FftPlanner;

/// Row-major complex grid with dimensions `(m1, m2)` = (rows, cols).
#[derive(Clone, Debug)]
pub struct ComplexGrid {
    m1: usize,
    m2: usize,
    data: Vec<Complex64>,
}

impl ComplexGrid {
    pub fn zeros(m1: usize, m2: usize) -> Self {
        Self { m1, m2, data: vec![Complex64::new(0.0, 0.0); m1 * m2] }
    }

    pub fn from_real(m1: usize, m2: usize, real: &[f64]) -> Self {
        assert_eq!(m1 * m2, real.len());
        Self { m1, m2, data: real.iter().map(|&v| Complex64::new(v, 0.0)).collect() }
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.m1, self.m2)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        self.data[i * self.m2 + j]
    }

    #[inline]
    pub fn set(&mut self, i: usize, j: usize, v: Complex64) {
        self.data[i * self.m2 + j] = v;
    }

    pub fn data(&self) -> &[Complex64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Complex64] {
        &mut self.data
    }

    pub fn real_part(&self) -> Vec<f64> {
        self.data.iter().map(|c| c.re).collect()
    }

    pub fn sum_norm_sqr(&self) -> f64 {
        self.data.iter().map(|c| c.norm_sqr()).sum()
    }
}

/// Unitary 2-D DFT; `inverse` flips the exponent sign.
pub fn dft2(grid: &ComplexGrid, inverse: bool) -> ComplexGrid {
    let (m1, m2) = grid.dims();
    let mut planner = FftPlanner::new();
    let row_fft = if inverse { planner.plan_fft_inverse(m2) } else { planner.plan_fft_forward(m2) };
    let col_fft = if inverse { planner.plan_fft_inverse(m1) } else { planner.plan_fft_forward(m1) };

    let mut out = grid.clone();
    for row in out.data.chunks_mut(m2) {
        row_fft.process(row);
    }
    let mut scratch = vec![Complex64::new(0.0, 0.0); m1];
    for j in 0..m2 {
        for i in 0..m1 {
            scratch[i] = out.data[i * m2 + j];
        }
        col_fft.process(&mut scratch);
        for i in 0..m1 {
            out.data[i * m2 + j] = scratch[i];
        }
    }
    let scale = 1.0 / ((m1 * m2) as f64).sqrt();
    for v in out.data.iter_mut() {
        *v *= scale;
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};
    use std::f64::consts::PI;

    /// Direct O(n^2) transform; oracle only.
    fn dft2_direct(grid: &ComplexGrid, inverse: bool) -> ComplexGrid {
        let (m1, m2) = grid.dims();
        let sign = if inverse { 1.0 } else { -1.0 };
        let mut out = ComplexGrid::zeros(m1, m2);
        for w1 in 0..m1 {
            for w2 in 0..m2 {
                let mut acc = Complex64::new(0.0, 0.0);
                for s1 in 0..m1 {
                    for s2 in 0..m2 {
                        let ang = sign
                            * 2.0
                            * PI
                            * (w1 as f64 * s1 as f64 / m1 as f64
                                + w2 as f64 * s2 as f64 / m2 as f64);
                        acc += grid.get(s1, s2) * Complex64::new(ang.cos(), ang.sin());
                    }
                }
                out.set(w1, w2, acc / ((m1 * m2) as f64).sqrt());
            }
        }
        out
    }

    #[test]
    fn delta_transforms_to_constant() {
        let mut g = ComplexGrid::zeros(4, 4);
        g.set(0, 0, Complex64::new(1.0, 0.0));
        let f = dft2(&g, false);
        for i in 0..4 {
            for j in 0..4 {
                assert!((f.get(i, j) - Complex64::new(0.25, 0.0)).norm() < 1e-14);
            }
        }
    }

    #[test]
    fn constant_transforms_to_spike() {
        let (m1, m2) = (5, 7);
        let c = 2.5;
        let g = ComplexGrid::from_real(m1, m2, &vec![c; m1 * m2]);
        let f = dft2(&g, false);
        let expect = c * ((m1 * m2) as f64).sqrt();
        assert!((f.get(0, 0) - Complex64::new(expect, 0.0)).norm() < 1e-12);
        for i in 0..m1 {
            for j in 0..m2 {
                if (i, j) != (0, 0) {
                    assert!(f.get(i, j).norm() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn matches_direct_oracle_and_round_trips() {
        let mut rng = StdRng::seed_from_u64(11);
        for &(m1, m2) in &[(8usize, 8usize), (6, 10), (7, 9)] {
            let vals: Vec<f64> = (0..m1 * m2).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let g = ComplexGrid::from_real(m1, m2, &vals);
            let fast = dft2(&g, false);
            let slow = dft2_direct(&g, false);
            for k in 0..m1 * m2 {
                assert!((fast.data()[k] - slow.data()[k]).norm() < 1e-10);
            }
            // Round trip and Parseval.
            let back = dft2(&fast, true);
            for k in 0..m1 * m2 {
                assert!((back.data()[k] - g.data()[k]).norm() < 1e-12);
            }
            assert!((fast.sum_norm_sqr() - g.sum_norm_sqr()).abs() < 1e-10);
        }
    }
}
