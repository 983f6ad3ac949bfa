//! Sine and cosine (type-I) transforms on the quarter lattice `x_j = j/L`, `j = 0..=L`.
//!
//! Both transforms are computed with a complex FFT of length `2L` acting on the
//! odd or even extension of the data. Two real rows are packed into one complex
//! sequence (one in the real part, one in the imaginary part).

use std::sync::Arc;

use ndarray::Array2;
use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use super::Parity;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum Direction {
    /// coefficients -> node values
    Synthesis,
    /// node values -> coefficients
    Analysis,
}

/// Plans for one lattice size. Cloning is cheap (the FFT plans are shared).
#[derive(Clone)]
pub(crate) struct TrigPlan {
    half: usize,
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for TrigPlan {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("TrigPlan").field("half", &self.half).finish()
    }
}

struct Work {
    buf: Vec<Complex64>,
    scratch: Vec<Complex64>,
}

impl TrigPlan {
    pub(crate) fn new(half: usize) -> Self {
        let mut planner = FftPlanner::<f64>::new();
        let forward = planner.plan_fft_forward(2 * half);
        let inverse = planner.plan_fft_inverse(2 * half);
        Self { half, forward, inverse }
    }

    fn work(&self) -> Work {
        let scratch_len = self
            .forward
            .get_inplace_scratch_len()
            .max(self.inverse.get_inplace_scratch_len());
        Work {
            buf: vec![Complex64::new(0.0, 0.0); 2 * self.half],
            scratch: vec![Complex64::new(0.0, 0.0); scratch_len],
        }
    }

    /// Transform one or two rows in place. `b` may be absent (odd row count).
    fn rows(&self, work: &mut Work, parity: Parity, dir: Direction, a: &mut [f64], b: Option<&mut [f64]>) {
        let l = self.half;
        let n = 2 * l;
        let zero = Complex64::new(0.0, 0.0);
        let pair = |a: &[f64], b: &Option<&mut [f64]>, j: usize| -> Complex64 {
            Complex64::new(a[j], b.as_ref().map_or(0.0, |b| b[j]))
        };
        let buf = &mut work.buf;
        match (parity, dir) {
            (Parity::Odd, _) => {
                buf[0] = zero;
                buf[l] = zero;
                for j in 1..l {
                    let v = pair(a, &b, j);
                    buf[j] = v;
                    buf[n - j] = -v;
                }
            }
            (Parity::Even, Direction::Synthesis) => {
                buf[0] = pair(a, &b, 0) * 2.0;
                buf[l] = pair(a, &b, l) * 2.0;
                for j in 1..l {
                    let v = pair(a, &b, j);
                    buf[j] = v;
                    buf[n - j] = v;
                }
            }
            (Parity::Even, Direction::Analysis) => {
                buf[0] = pair(a, &b, 0);
                buf[l] = pair(a, &b, l);
                for j in 1..l {
                    let v = pair(a, &b, j);
                    buf[j] = v;
                    buf[n - j] = v;
                }
            }
        }
        match dir {
            Direction::Synthesis => self.inverse.process_with_scratch(buf, &mut work.scratch),
            Direction::Analysis => self.forward.process_with_scratch(buf, &mut work.scratch),
        }
        let inv_l = 1.0 / l as f64;
        match (parity, dir) {
            (Parity::Odd, Direction::Synthesis) => {
                // S_j = 2i f_a - 2 f_b
                for j in 0..=l {
                    a[j] = 0.5 * buf[j].im;
                }
                a[0] = 0.0;
                a[l] = 0.0;
                if let Some(b) = b {
                    for j in 0..=l {
                        b[j] = -0.5 * buf[j].re;
                    }
                    b[0] = 0.0;
                    b[l] = 0.0;
                }
            }
            (Parity::Even, Direction::Synthesis) => {
                for j in 0..=l {
                    a[j] = 0.5 * buf[j].re;
                }
                if let Some(b) = b {
                    for j in 0..=l {
                        b[j] = 0.5 * buf[j].im;
                    }
                }
            }
            (Parity::Odd, Direction::Analysis) => {
                // T_m = -2i S_a + 2 S_b
                for m in 0..=l {
                    a[m] = -buf[m].im * inv_l;
                }
                a[0] = 0.0;
                a[l] = 0.0;
                if let Some(b) = b {
                    for m in 0..=l {
                        b[m] = buf[m].re * inv_l;
                    }
                    b[0] = 0.0;
                    b[l] = 0.0;
                }
            }
            (Parity::Even, Direction::Analysis) => {
                for m in 0..=l {
                    a[m] = buf[m].re * inv_l;
                }
                a[0] *= 0.5;
                a[l] *= 0.5;
                if let Some(b) = b {
                    for m in 0..=l {
                        b[m] = buf[m].im * inv_l;
                    }
                    b[0] *= 0.5;
                    b[l] *= 0.5;
                }
            }
        }
    }

    /// Apply the 1D transform along the contiguous axis (axis 1) of every row.
    fn along_rows(&self, arr: &mut Array2<f64>, parity: Parity, dir: Direction) {
        let width = self.half + 1;
        debug_assert_eq!(arr.ncols(), width);
        let mut work = self.work();
        let data = arr
            .as_slice_mut()
            .expect("transform arrays are kept in standard layout");
        for chunk in data.chunks_mut(2 * width) {
            if chunk.len() == 2 * width {
                let (a, b) = chunk.split_at_mut(width);
                self.rows(&mut work, parity, dir, a, Some(b));
            } else {
                self.rows(&mut work, parity, dir, chunk, None);
            }
        }
    }

    /// 2D separable transform with the given parity per axis.
    pub(crate) fn transform_2d(&self, input: &Array2<f64>, parity: [Parity; 2], dir: Direction) -> Array2<f64> {
        let mut arr = input.as_standard_layout().into_owned();
        self.along_rows(&mut arr, parity[1], dir);
        let mut t = arr.t().as_standard_layout().into_owned();
        self.along_rows(&mut t, parity[0], dir);
        t.t().as_standard_layout().into_owned()
    }
}
