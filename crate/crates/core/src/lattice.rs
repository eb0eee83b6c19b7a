//! Cubic lattices in `R^d` and their discrete Fourier transforms.

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::{FftDirection, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};

/// Largest number of nodes a lattice may hold.
pub const MAX_NODES: usize = 1 << 24;

/// `n^d` nodes with spacing `h = L / n` at `x_j = (j - n/2) h`, so the origin
/// is node `n/2` along each axis and the box is `[-L/2, L/2)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    pub dim: usize,
    pub extent: f64,
    pub points: usize,
}

impl LatticeSpec {
    pub fn new(dim: usize, extent: f64, points: usize) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            return Err(invalid("extent", format!("{extent} must be positive")));
        }
        if points < 4 || points % 2 != 0 {
            return Err(invalid(
                "points",
                format!("{points} must be even and at least 4"),
            ));
        }
        let total = (points as u128).pow(dim as u32);
        if total > MAX_NODES as u128 {
            return Err(Error::Lattice(format!(
                "{points}^{dim} nodes exceed the cap of {MAX_NODES}"
            )));
        }
        Ok(Self {
            dim,
            extent,
            points,
        })
    }

    pub fn spacing(&self) -> f64 {
        self.extent / self.points as f64
    }

    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    /// Same box, half the points.
    pub fn coarsened(&self) -> Result<Self> {
        Self::new(self.dim, self.extent, self.points / 2)
    }

    /// Per-axis indices of flat (row-major) index `idx`.
    pub fn unflatten(&self, mut idx: usize, out: &mut [usize]) {
        for slot in out.iter_mut().rev() {
            *slot = idx % self.points;
            idx /= self.points;
        }
    }

    pub fn flatten(&self, idx: &[usize]) -> usize {
        idx.iter().fold(0, |acc, &i| acc * self.points + i)
    }

    pub fn coordinate(&self, axis_index: usize) -> f64 {
        (axis_index as f64 - (self.points / 2) as f64) * self.spacing()
    }

    pub fn node(&self, idx: usize) -> Vec<f64> {
        let mut ix = vec![0; self.dim];
        self.unflatten(idx, &mut ix);
        ix.iter().map(|&i| self.coordinate(i)).collect()
    }

    /// Angular wavenumber of DFT bin `m` along one axis.
    pub fn wavenumber(&self, m: usize) -> f64 {
        let n = self.points as i64;
        let m = m as i64;
        let signed = if m < n / 2 { m } else { m - n };
        2.0 * std::f64::consts::PI * signed as f64 / self.extent
    }

    /// Nyquist wavenumber `π / h`.
    pub fn k_max(&self) -> f64 {
        std::f64::consts::PI / self.spacing()
    }
}

/// In-place unnormalized `d`-dimensional DFT of row-major data with `n`
/// points per axis.
pub fn fft_nd(data: &mut [Complex64], n: usize, d: usize, direction: FftDirection) {
    debug_assert_eq!(data.len(), n.pow(d as u32));
    let fft = FftPlanner::new().plan_fft(n, direction);
    for axis in 0..d {
        let stride = n.pow((d - 1 - axis) as u32);
        let block = n * stride;
        data.par_chunks_mut(block).for_each(|chunk| {
            let mut line = vec![Complex64::new(0.0, 0.0); n];
            let mut scratch = vec![Complex64::new(0.0, 0.0); fft.get_inplace_scratch_len()];
            for offset in 0..stride {
                for (i, v) in line.iter_mut().enumerate() {
                    *v = chunk[offset + i * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (i, v) in line.iter().enumerate() {
                    chunk[offset + i * stride] = *v;
                }
            }
        });
    }
}

/// Maps between centered storage (origin at index `n/2` per axis) and FFT
/// storage (origin at index 0); the map is its own inverse for even `n`.
pub fn fftshift<T: Copy + Send + Sync>(spec: &LatticeSpec, data: &[T]) -> Vec<T> {
    let n = spec.points;
    let half = n / 2;
    (0..data.len())
        .into_par_iter()
        .map(|idx| {
            let mut src = 0;
            let mut rest = idx;
            let mut scale = 1;
            for _ in 0..spec.dim {
                let i = rest % n;
                rest /= n;
                src += ((i + half) % n) * scale;
                scale *= n;
            }
            data[src]
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn spec_validation() {
        assert!(LatticeSpec::new(3, 16.0, 64).is_ok());
        assert!(LatticeSpec::new(3, 16.0, 63).is_err());
        assert!(LatticeSpec::new(3, -1.0, 64).is_err());
        assert!(LatticeSpec::new(5, 16.0, 512).is_err());
    }

    #[test]
    fn origin_is_a_node() {
        let s = LatticeSpec::new(3, 16.0, 64).unwrap();
        let idx = s.flatten(&[32, 32, 32]);
        assert_eq!(s.node(idx), vec![0.0; 3]);
        assert_eq!(s.coordinate(0), -8.0);
        assert_eq!(s.wavenumber(1), 2.0 * std::f64::consts::PI / 16.0);
        assert!(s.wavenumber(63) < 0.0);
    }

    #[test]
    fn fft_round_trip_and_delta() {
        let s = LatticeSpec::new(3, 1.0, 8).unwrap();
        let mut data = vec![Complex64::new(0.0, 0.0); s.len()];
        data[0] = Complex64::new(1.0, 0.0);
        fft_nd(&mut data, 8, 3, FftDirection::Forward);
        assert!(data
            .iter()
            .all(|v| (v.re - 1.0).abs() < 1e-14 && v.im.abs() < 1e-14));
        fft_nd(&mut data, 8, 3, FftDirection::Inverse);
        let scale = s.len() as f64;
        assert!((data[0].re / scale - 1.0).abs() < 1e-14);
        assert!(data[1..].iter().all(|v| v.norm() / scale < 1e-14));
    }

    #[test]
    fn shift_is_involution() {
        let s = LatticeSpec::new(2, 1.0, 6).unwrap();
        let data: Vec<usize> = (0..s.len()).collect();
        let back = fftshift(&s, &fftshift(&s, &data));
        assert_eq!(back, data);
        // the centered origin goes to FFT index 0
        let shifted = fftshift(&s, &data);
        assert_eq!(shifted[0], s.flatten(&[3, 3]));
    }
}
