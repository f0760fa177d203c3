//! Shared 2-D FFT helper (row transforms followed by column transforms).

use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};

pub struct Fft2 {
    h: usize,
    w: usize,
    row_fwd: Arc<dyn Fft<f64>>,
    col_fwd: Arc<dyn Fft<f64>>,
    row_inv: Arc<dyn Fft<f64>>,
    col_inv: Arc<dyn Fft<f64>>,
}

impl Fft2 {
    pub fn new(h: usize, w: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            h,
            w,
            row_fwd: planner.plan_fft_forward(w),
            col_fwd: planner.plan_fft_forward(h),
            row_inv: planner.plan_fft_inverse(w),
            col_inv: planner.plan_fft_inverse(h),
        }
    }

    /// Unnormalized transform in place; `buf` is `[h, w]` row-major.
    pub fn forward(&self, buf: &mut [Complex<f64>]) {
        self.run(buf, &self.row_fwd, &self.col_fwd);
    }

    /// Unnormalized inverse; divide by `h * w` to undo [`Fft2::forward`].
    pub fn inverse(&self, buf: &mut [Complex<f64>]) {
        self.run(buf, &self.row_inv, &self.col_inv);
    }

    fn run(&self, buf: &mut [Complex<f64>], rows: &Arc<dyn Fft<f64>>, cols: &Arc<dyn Fft<f64>>) {
        assert_eq!(buf.len(), self.h * self.w, "buffer does not match the planned grid");
        rows.process(buf);
        let mut col = vec![Complex::new(0.0, 0.0); self.h];
        for j in 0..self.w {
            for i in 0..self.h {
                col[i] = buf[i * self.w + j];
            }
            cols.process(&mut col);
            for i in 0..self.h {
                buf[i * self.w + j] = col[i];
            }
        }
    }
}

/// Signed integer frequency of DFT bin `i` on an axis of length `n`.
pub fn signed_freq(i: usize, n: usize) -> f64 {
    if i <= n / 2 {
        i as f64
    } else {
        i as f64 - n as f64
    }
}
