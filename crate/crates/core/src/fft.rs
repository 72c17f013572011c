//! Minimal 3D complex FFT on a cube, built from rustfft 1D plans.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

pub struct Fft3 {
    pub p: usize,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for Fft3 {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Fft3").field("p", &self.p).finish()
    }
}

impl Fft3 {
    pub fn new(p: usize) -> Self {
        let mut planner = FftPlanner::new();
        Fft3 { p, fwd: planner.plan_fft_forward(p), inv: planner.plan_fft_inverse(p) }
    }

    /// Unnormalized transform in place; the inverse does not divide by `p^3`.
    pub fn process(&self, data: &mut [Complex64], inverse: bool) {
        let p = self.p;
        assert_eq!(data.len(), p * p * p);
        let plan = if inverse { &self.inv } else { &self.fwd };
        let mut scratch = vec![Complex64::new(0.0, 0.0); plan.get_inplace_scratch_len()];
        // Contiguous axis: every run of `p` values is one line.
        plan.process_with_scratch(data, &mut scratch);
        let mut slab = vec![Complex64::new(0.0, 0.0); p * p];
        // Middle axis: transpose each (j, k) slab.
        for i in 0..p {
            let base = i * p * p;
            for j in 0..p {
                for k in 0..p {
                    slab[k * p + j] = data[base + j * p + k];
                }
            }
            plan.process_with_scratch(&mut slab, &mut scratch);
            for j in 0..p {
                for k in 0..p {
                    data[base + j * p + k] = slab[k * p + j];
                }
            }
        }
        // Outer axis: gather the (i, k) plane at fixed j.
        for j in 0..p {
            for i in 0..p {
                for k in 0..p {
                    slab[k * p + i] = data[(i * p + j) * p + k];
                }
            }
            plan.process_with_scratch(&mut slab, &mut scratch);
            for i in 0..p {
                for k in 0..p {
                    data[(i * p + j) * p + k] = slab[k * p + i];
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matches_naive_dft() {
        let p = 4;
        let f = Fft3::new(p);
        let x: Vec<Complex64> = (0..p * p * p).map(|i| Complex64::new((i as f64 * 0.37).sin(), (i as f64).cos())).collect();
        let mut y = x.clone();
        f.process(&mut y, false);
        let w = -2.0 * std::f64::consts::PI / p as f64;
        for a in 0..p {
            for b in 0..p {
                for c in 0..p {
                    let mut s = Complex64::new(0.0, 0.0);
                    for i in 0..p {
                        for j in 0..p {
                            for k in 0..p {
                                let ph = w * ((a * i + b * j + c * k) as f64);
                                s += x[(i * p + j) * p + k] * Complex64::from_polar(1.0, ph);
                            }
                        }
                    }
                    assert!((s - y[(a * p + b) * p + c]).norm() < 1e-12);
                }
            }
        }
        f.process(&mut y, true);
        for (u, v) in x.iter().zip(&y) {
            assert!((u - v / (p * p * p) as f64).norm() < 1e-13);
        }
    }
}
