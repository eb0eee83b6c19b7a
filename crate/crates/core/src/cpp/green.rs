use std::f64::consts::PI;
use std::io::{self, Write};

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftDirection;
use serde::{Deserialize, Serialize};

use super::kernel::{validate_kernel, JumpKernel, KernelFamily};
use crate::error::{check_dim, invalid, Error, Result};
use crate::lattice::{fft_nd, fftshift, LatticeSpec};
use crate::quad::{self, Tolerance};
use crate::special::{gamma, heat_tail, sphere_area};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum GreenMethod {
    Series { terms: usize },
    Spectral,
}

/// `G₀` sampled on the nodes of a lattice, stored centered: node `j` sits at
/// `(j - n/2) h` along each axis.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenField {
    lattice: LatticeSpec,
    values: Vec<f64>,
    method: GreenMethod,
    error_estimate: f64,
}

/// JSON summary of a field, without the node values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GreenSummary {
    pub lattice: LatticeSpec,
    pub method: GreenMethod,
    pub origin_value: f64,
    pub min: f64,
    pub max: f64,
    pub error_estimate: f64,
}

impl GreenField {
    pub fn lattice(&self) -> &LatticeSpec {
        &self.lattice
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn method(&self) -> GreenMethod {
        self.method
    }

    pub fn error_estimate(&self) -> f64 {
        self.error_estimate
    }

    pub fn origin_index(&self) -> usize {
        let half = self.lattice.points / 2;
        self.lattice.flatten(&vec![half; self.lattice.dim])
    }

    pub fn origin_value(&self) -> f64 {
        self.values[self.origin_index()]
    }

    /// Value at the node with per-axis indices `idx`.
    pub fn at(&self, idx: &[usize]) -> f64 {
        self.values[self.lattice.flatten(idx)]
    }

    /// Value at the node displaced from the origin by `offset` nodes per axis,
    /// if it lies on the lattice.
    pub fn at_offset(&self, offset: &[i64]) -> Option<f64> {
        let n = self.lattice.points as i64;
        let half = n / 2;
        let mut flat = 0usize;
        for &o in offset {
            let i = o + half;
            if !(0..n).contains(&i) {
                return None;
            }
            flat = flat * n as usize + i as usize;
        }
        Some(self.values[flat])
    }

    /// Multilinear interpolation; `None` outside the lattice.
    pub fn interpolate(&self, x: &[f64]) -> Option<f64> {
        let d = self.lattice.dim;
        if x.len() != d {
            return None;
        }
        let h = self.lattice.spacing();
        let n = self.lattice.points;
        let mut base = vec![0usize; d];
        let mut frac = vec![0.0; d];
        for i in 0..d {
            let u = x[i] / h + (n / 2) as f64;
            if !(0.0..=(n - 1) as f64).contains(&u) {
                return None;
            }
            let b = (u.floor() as usize).min(n - 2);
            base[i] = b;
            frac[i] = u - b as f64;
        }
        let mut total = 0.0;
        let mut idx = vec![0usize; d];
        for corner in 0..(1usize << d) {
            let mut w = 1.0;
            for i in 0..d {
                let up = (corner >> i) & 1 == 1;
                idx[i] = base[i] + up as usize;
                w *= if up { frac[i] } else { 1.0 - frac[i] };
            }
            if w != 0.0 {
                total += w * self.at(&idx);
            }
        }
        Some(total)
    }

    /// Largest `|G(x) - G(-x)|` over nodes whose mirror image is a node.
    pub fn symmetry_defect(&self) -> f64 {
        let n = self.lattice.points;
        let d = self.lattice.dim;
        (0..self.values.len())
            .into_par_iter()
            .map(|flat| {
                let mut ix = vec![0; d];
                self.lattice.unflatten(flat, &mut ix);
                if ix.contains(&0) {
                    return 0.0;
                }
                let mirror: Vec<usize> = ix.iter().map(|&i| n - i).collect();
                (self.values[flat] - self.at(&mirror)).abs()
            })
            .reduce(|| 0.0, f64::max)
    }

    /// Flat indices of nodes with `|x| <= radius`.
    pub fn nodes_within(&self, radius: f64) -> Vec<usize> {
        (0..self.values.len())
            .filter(|&i| {
                let x = self.lattice.node(i);
                x.iter().map(|v| v * v).sum::<f64>() <= radius * radius
            })
            .collect()
    }

    pub fn summary(&self) -> GreenSummary {
        let (min, max) = self
            .values
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            });
        GreenSummary {
            lattice: self.lattice,
            method: self.method,
            origin_value: self.origin_value(),
            min,
            max,
            error_estimate: self.error_estimate,
        }
    }

    /// One row per node: coordinates then value, 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let d = self.lattice.dim;
        let header: Vec<String> = (0..d)
            .map(|i| format!("x{i}"))
            .chain(["g0".to_string()])
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (i, v) in self.values.iter().enumerate() {
            for c in self.lattice.node(i) {
                write!(w, "{c:.16e},")?;
            }
            writeln!(w, "{v:.16e}")?;
        }
        Ok(())
    }
}

/// A partial sum of the convolution series with its truncation error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SeriesValue {
    /// `Σ_{k=1}^{K} a^{*k}(x)`.
    pub partial_sum: f64,
    pub terms: usize,
    /// Rigorous upper bound on `Σ_{k>K} a^{*k}(x)`.
    pub tail_bound: f64,
    /// Approximation of the same tail.
    pub tail_estimate: f64,
}

impl SeriesValue {
    /// Partial sum plus the estimated tail.
    pub fn value(&self) -> f64 {
        self.partial_sum + self.tail_estimate
    }
}

/// `(2π)^{-d} ∫ â^{K+1} / (1 - â) dk`, which bounds `Σ_{k>K} a^{*k}(x)` for
/// every `x` when `â >= 0`.
fn spectral_tail_bound(a: &JumpKernel, terms: usize) -> Result<f64> {
    let d = a.dim() as i32;
    let p = (terms + 1) as i32;
    let v = quad::integrate_to_infinity(
        |k| {
            if k == 0.0 {
                return 0.0;
            }
            k.powi(d - 1) * a.radial_char(k).powi(p) / a.one_minus_radial_char(k)
        },
        0.0,
        Tolerance::rel(1e-9),
    )?;
    Ok(sphere_area(a.dim()) * v.value / (2.0 * PI).powi(d))
}

fn check_terms(terms: usize) -> Result<()> {
    if terms < 1 {
        Err(invalid("K", "the series needs at least one term"))
    } else {
        Ok(())
    }
}

fn gaussian_terms(d: usize, b: f64, shift: &[f64], x: &[f64], terms: usize) -> f64 {
    let half_d = d as f64 / 2.0;
    let mut sum = 0.0;
    for k in 1..=terms {
        let kb = k as f64 * b;
        let r2: f64 = x
            .iter()
            .zip(shift)
            .map(|(xi, s)| (xi - k as f64 * s).powi(2))
            .sum();
        sum += (2.0 * PI * kb).powf(-half_d) * (-r2 / (2.0 * kb)).exp();
    }
    sum
}

/// `Σ_{k=1}^{K} a^{*k}(x)` with truncation bounds.
///
/// Gaussian kernels use the closed-form convolution powers. Other families
/// are convolved on a lattice large enough to hold `a^{*K}` and interpolated.
pub fn g0_series(a: &JumpKernel, x: &[f64], terms: usize) -> Result<SeriesValue> {
    check_terms(terms)?;
    check_dim(a.dim(), x.len())?;
    let d = a.dim();
    let half_d = d as f64 / 2.0;
    let r = x.iter().map(|v| v * v).sum::<f64>().sqrt();
    match a.family() {
        KernelFamily::Gaussian { variance: b } => {
            let partial_sum = gaussian_terms(d, b, a.shift(), x, terms);
            let tail_bound =
                (2.0 * PI * b).powf(-half_d) * (terms as f64).powf(1.0 - half_d) / (half_d - 1.0);
            // midpoint rule for the smooth tail of the series
            let tail_estimate = heat_tail(d, b, r, terms as f64 + 0.5);
            Ok(SeriesValue {
                partial_sum,
                terms,
                tail_bound,
                tail_estimate,
            })
        }
        KernelFamily::ExponentialTail { .. } => {
            let sigma = a.coordinate_variance().sqrt();
            let reach = 2.0
                * (x.iter().fold(0.0f64, |m, v| m.max(v.abs()))
                    + 8.0 * sigma * (terms as f64).sqrt());
            let h = sigma / 4.0;
            let points = ((reach / h).ceil() as usize).next_multiple_of(2).max(8);
            let lattice = LatticeSpec::new(d, points as f64 * h, points)
                .map_err(|e| Error::ResourceCap(format!("series lattice for K = {terms}: {e}")))?;
            let field = g0_series_field(a, &lattice, terms)?;
            let partial_sum = field
                .interpolate(x)
                .ok_or_else(|| Error::Lattice("point outside the series lattice".into()))?;
            Ok(SeriesValue {
                partial_sum,
                terms,
                tail_bound: spectral_tail_bound(a, terms)?,
                tail_estimate: heat_tail(d, a.coordinate_variance(), r, terms as f64 + 0.5),
            })
        }
    }
}

/// `Σ_{k=1}^{K} a^{*k}` at distance `r` for a centered kernel in `d = 3`:
/// `a(r)` in closed form plus the sine transform
/// `(2π² r)^{-1} ∫_0^∞ ρ sin(ρr) â²(1 - â^{K-1}) / (1 - â) dρ`.
/// Needs no lattice, so it checks the series at any `K`.
pub fn g0_series_radial(a: &JumpKernel, r: f64, terms: usize) -> Result<SeriesValue> {
    check_terms(terms)?;
    if a.dim() != 3 {
        return Err(invalid(
            "dim",
            "the radial series oracle is implemented for d = 3",
        ));
    }
    if !a.is_centered() {
        return Err(invalid(
            "kernel",
            "the radial series oracle needs a centered kernel",
        ));
    }
    if !(r >= 0.0 && r.is_finite()) {
        return Err(invalid("r", format!("{r} must be finite and non-negative")));
    }
    let k = terms as i32;
    let rest = |rho: f64| -> f64 {
        if terms < 2 {
            return 0.0;
        }
        let c = a.radial_char(rho);
        let om = a.one_minus_radial_char(rho);
        if om < 1e-12 {
            (terms - 1) as f64
        } else {
            c * c * (1.0 - c.powi(k - 1)) / om
        }
    };
    let kernel = |rho: f64| {
        let x = rho * r;
        // sin(x)/r, with the small-x limit written out
        let sinc = if x < 1e-4 {
            rho * (1.0 - x * x / 6.0)
        } else {
            x.sin() / r
        };
        rho * sinc * rest(rho)
    };
    // ρ² â² decays at least like ρ^{-6}; stop once the remainder is negligible
    let mut rho_max = 1.0;
    while rho_max * rho_max * rest(rho_max) > 1e-16 && rho_max < 1e6 {
        rho_max *= 2.0;
    }
    let sigma = a.coordinate_variance().sqrt();
    let knee = 10.0 / (sigma * (terms as f64).sqrt());
    let step = if r > 0.0 { (PI / r).min(1.0) } else { 1.0 };
    let mut cuts = vec![0.0, knee.min(rho_max)];
    let mut c = step;
    while c < rho_max {
        if c > knee {
            cuts.push(c);
        }
        c += step;
    }
    cuts.push(rho_max);
    let tol = Tolerance {
        abs: 1e-15,
        rel: 1e-11,
        max_intervals: 2000,
    };
    let mut sum = 0.0;
    for w in cuts.windows(2) {
        if w[1] > w[0] {
            sum += quad::integrate(kernel, w[0], w[1], tol)?.value;
        }
    }
    let partial_sum = a.radial_density(r) + sum / (2.0 * PI * PI);
    Ok(SeriesValue {
        partial_sum,
        terms,
        tail_bound: spectral_tail_bound(a, terms)?,
        tail_estimate: heat_tail(3, a.coordinate_variance(), r, terms as f64 + 0.5),
    })
}

/// Node coordinates in FFT order (origin at index 0).
fn fft_order_radius(lattice: &LatticeSpec, flat: usize, ix: &mut [usize]) -> f64 {
    lattice.unflatten(flat, ix);
    let n = lattice.points;
    let h = lattice.spacing();
    ix.iter()
        .map(|&i| {
            let s = if i < n / 2 {
                i as f64
            } else {
                i as f64 - n as f64
            };
            (s * h).powi(2)
        })
        .sum::<f64>()
        .sqrt()
}

fn fft_order_wavenumber(lattice: &LatticeSpec, flat: usize, ix: &mut [usize]) -> f64 {
    lattice.unflatten(flat, ix);
    ix.iter()
        .map(|&m| lattice.wavenumber(m).powi(2))
        .sum::<f64>()
        .sqrt()
}

/// Real part of the inverse transform of `spectrum` (FFT order), scaled to
/// approximate `(2π)^{-d} ∫ F(k) e^{i(k,x)} dk`, returned in FFT order.
fn inverse_transform(lattice: &LatticeSpec, mut spectrum: Vec<Complex64>) -> Vec<f64> {
    fft_nd(
        &mut spectrum,
        lattice.points,
        lattice.dim,
        FftDirection::Inverse,
    );
    let scale = lattice.extent.powi(lattice.dim as i32).recip();
    spectrum.into_par_iter().map(|c| c.re * scale).collect()
}

/// `Σ_{k=1}^{K} a^{*k}` on a lattice.
///
/// Gaussian kernels are evaluated in closed form at each node. Other
/// families are sampled on the lattice and convolved with themselves through
/// the discrete transform, normalized to unit discrete mass; the box must be
/// large enough that `a^{*K}` does not wrap around.
pub fn g0_series_field(a: &JumpKernel, lattice: &LatticeSpec, terms: usize) -> Result<GreenField> {
    check_terms(terms)?;
    check_dim(a.dim(), lattice.dim)?;
    let d = a.dim();
    let (values, error_estimate) = match a.family() {
        KernelFamily::Gaussian { variance: b } => {
            let values: Vec<f64> = (0..lattice.len())
                .into_par_iter()
                .map(|i| gaussian_terms(d, b, a.shift(), &lattice.node(i), terms))
                .collect();
            let half_d = d as f64 / 2.0;
            let bound =
                (2.0 * PI * b).powf(-half_d) * (terms as f64).powf(1.0 - half_d) / (half_d - 1.0);
            (values, bound)
        }
        KernelFamily::ExponentialTail { .. } => {
            let sampled: Vec<Complex64> = (0..lattice.len())
                .into_par_iter()
                .map(|i| {
                    let mut ix = vec![0; d];
                    let r = fft_order_radius(lattice, i, &mut ix);
                    Complex64::new(a.radial_density(r), 0.0)
                })
                .collect();
            let mut spectrum = sampled;
            fft_nd(&mut spectrum, lattice.points, d, FftDirection::Forward);
            let mass = spectrum[0].re;
            let k = terms as i32;
            // F = (discrete transform of a) / (discrete mass), so Σ F^k
            // inverts to the k-fold discrete convolutions
            let spectrum: Vec<Complex64> = spectrum
                .into_par_iter()
                .map(|c| {
                    let f = c.re / mass;
                    let s = if (1.0 - f).abs() < 1e-12 {
                        terms as f64
                    } else {
                        f * (1.0 - f.powi(k)) / (1.0 - f)
                    };
                    Complex64::new(s, 0.0)
                })
                .collect();
            let values = inverse_transform(lattice, spectrum);
            (fftshift(lattice, &values), spectral_tail_bound(a, terms)?)
        }
    };
    Ok(GreenField {
        lattice: *lattice,
        values,
        method: GreenMethod::Series { terms },
        error_estimate,
    })
}

/// `Σ_{k=1}^{K} a^{*k}` through the identity `Σ â^k = â (1 - â^K) / (1 - â)`:
/// `a` itself in closed form, the rest inverted on the lattice. Mass beyond the box wraps around, so `K` must be
/// small enough that `a^{*K}` fits.
pub fn partial_sum_field(
    a: &JumpKernel,
    lattice: &LatticeSpec,
    terms: usize,
) -> Result<GreenField> {
    check_terms(terms)?;
    check_dim(a.dim(), lattice.dim)?;
    validate_kernel(a).into_result()?;
    let d = a.dim();
    let k = terms as i32;
    let spectrum: Vec<Complex64> = (0..lattice.len())
        .into_par_iter()
        .map(|i| {
            let mut ix = vec![0; d];
            let kn = fft_order_wavenumber(lattice, i, &mut ix);
            let ah = a.radial_char(kn);
            let om = a.one_minus_radial_char(kn);
            // the k = 1 term goes in real space: â alone may decay slowly
            let s = if om < 1e-12 {
                (terms - 1) as f64
            } else {
                ah * ah * (1.0 - ah.powi(k - 1)) / om
            };
            Complex64::new(s, 0.0)
        })
        .collect();
    let rest = inverse_transform(lattice, spectrum);
    let values: Vec<f64> = rest
        .par_iter()
        .enumerate()
        .map(|(i, &v)| {
            let mut ix = vec![0; d];
            a.radial_density(fft_order_radius(lattice, i, &mut ix)) + v
        })
        .collect();
    Ok(GreenField {
        lattice: *lattice,
        values: fftshift(lattice, &values),
        method: GreenMethod::Series { terms },
        error_estimate: 0.0,
    })
}

/// Tuning for [`g0_spectral`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpectralOptions {
    /// Recompute on the lattice with half the points and fold the
    /// disagreement into the error estimate.
    pub resolution_check: bool,
    /// Disagreement between the two resolutions above which the lattice is
    /// rejected as too coarse.
    pub max_discrepancy: f64,
}

impl Default for SpectralOptions {
    fn default() -> Self {
        Self {
            resolution_check: true,
            max_discrepancy: 1e-3,
        }
    }
}

/// Newtonian potential of `-(σ²/2) Δ` with the singularity smoothed at
/// scale `√ε`: `(2/σ²) ∫_ε^∞ (4πs)^{-d/2} e^{-r²/(4s)} ds`.
fn smoothed_newtonian(d: usize, sigma2: f64, eps: f64, r: f64) -> f64 {
    2.0 / sigma2 * heat_tail(d, 2.0, r, eps)
}

/// `(2/σ²) Γ(d/2 - 1) / (4 π^{d/2} r^{d-2})`, the far-field of `G₀`.
pub(crate) fn newtonian(d: usize, sigma2: f64, r: f64) -> f64 {
    let h = d as f64 / 2.0;
    2.0 / sigma2 * gamma(h - 1.0) / (4.0 * PI.powf(h) * r.powi(d as i32 - 2))
}

struct SpectralCore {
    values: Vec<f64>,
    error_estimate: f64,
}

/// `G₀ = a + N_ε + R` where `N_ε` is the smoothed Newtonian potential, known
/// in closed form, and `R` is the inverse transform of the bounded, smooth
/// remainder `â² / (1 - â) - (2 / (σ² |k|²)) e^{-ε|k|²}`.
fn spectral_core(a: &JumpKernel, lattice: &LatticeSpec) -> Result<SpectralCore> {
    let d = a.dim();
    let sigma2 = a.coordinate_variance();
    let k_max = lattice.k_max();
    // e^{-ε k_max²} ~ e^{-40} keeps the smoothed part band-limited
    let eps = 40.0 / (k_max * k_max);
    let remainder = |k: f64| {
        let ah = a.radial_char(k);
        ah * ah / a.one_minus_radial_char(k) - 2.0 / (sigma2 * k * k) * (-eps * k * k).exp()
    };
    // the remainder is even and smooth in k: Richardson to k = 0
    let k1 = 1e-2 / sigma2.sqrt();
    let r0 = (4.0 * remainder(k1) - remainder(2.0 * k1)) / 3.0;

    let spectrum: Vec<Complex64> = (0..lattice.len())
        .into_par_iter()
        .map(|i| {
            if i == 0 {
                return Complex64::new(r0, 0.0);
            }
            let mut ix = vec![0; d];
            let kn = fft_order_wavenumber(lattice, i, &mut ix);
            Complex64::new(remainder(kn), 0.0)
        })
        .collect();
    let rem = inverse_transform(lattice, spectrum);

    let values_fft: Vec<f64> = rem
        .par_iter()
        .enumerate()
        .map(|(i, &rv)| {
            let mut ix = vec![0; d];
            let r = fft_order_radius(lattice, i, &mut ix);
            a.radial_density(r) + smoothed_newtonian(d, sigma2, eps, r) + rv
        })
        .collect();

    // remainder on the faces of the box approximates the leading image term
    let n = lattice.points;
    let boundary = rem
        .iter()
        .enumerate()
        .filter(|&(i, _)| {
            let mut ix = vec![0; d];
            lattice.unflatten(i, &mut ix);
            ix.contains(&(n / 2))
        })
        .fold(0.0f64, |m, (_, v)| m.max(v.abs()));
    let periodization = 2.0 * d as f64 * boundary;

    // spectrum outside the Nyquist ball
    let ds = sphere_area(d) / (2.0 * PI).powi(d as i32);
    let truncation = quad::integrate_to_infinity(
        |k| {
            let ah = a.radial_char(k);
            k.powi(d as i32 - 1)
                * (ah * ah / a.one_minus_radial_char(k)
                    + 2.0 / (sigma2 * k * k) * (-eps * k * k).exp())
        },
        k_max,
        Tolerance::rel(1e-6),
    )?
    .value
        * ds;

    let top = values_fft.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let rounding = 1e-14 * top * (lattice.len() as f64).log2();
    if values_fft.iter().any(|v| !v.is_finite()) {
        return Err(Error::Lattice("non-finite Green function value".into()));
    }
    Ok(SpectralCore {
        values: fftshift(lattice, &values_fft),
        error_estimate: truncation + periodization + rounding,
    })
}

/// `G₀` on a lattice from its Fourier representation
/// `G₀(x) = (2π)^{-d} ∫ â(k) e^{i(k,x)} / (1 - â(k)) dk`.
pub fn g0_spectral(a: &JumpKernel, lattice: &LatticeSpec) -> Result<GreenField> {
    g0_spectral_with(a, lattice, SpectralOptions::default())
}

pub fn g0_spectral_with(
    a: &JumpKernel,
    lattice: &LatticeSpec,
    options: SpectralOptions,
) -> Result<GreenField> {
    check_dim(a.dim(), lattice.dim)?;
    validate_kernel(a).into_result()?;
    let fine = spectral_core(a, lattice)?;
    let mut error_estimate = fine.error_estimate;
    if options.resolution_check && lattice.points >= 16 && (lattice.points / 2) % 2 == 0 {
        let coarse_spec = lattice.coarsened()?;
        let coarse = spectral_core(a, &coarse_spec)?;
        // coarse node j sits on fine node 2j; compare on the inner half of the box
        let d = lattice.dim;
        let nc = coarse_spec.points;
        let mut ix = vec![0; d];
        let mut fx = vec![0; d];
        let mut gap = 0.0f64;
        for (j, cv) in coarse.values.iter().enumerate() {
            coarse_spec.unflatten(j, &mut ix);
            if ix.iter().any(|&i| i < nc / 4 || i > 3 * nc / 4) {
                continue;
            }
            fx.iter_mut().zip(&ix).for_each(|(f, &i)| *f = 2 * i);
            gap = gap.max((lattice_value(lattice, &fine.values, &fx) - cv).abs());
        }
        if gap
            > options
                .max_discrepancy
                .max(10.0 * (fine.error_estimate + coarse.error_estimate))
        {
            return Err(Error::Lattice(format!(
                "lattice too coarse: fields at {} and {} points per side differ by {gap:.3e}",
                lattice.points, nc
            )));
        }
        error_estimate += gap;
    }
    Ok(GreenField {
        lattice: *lattice,
        values: fine.values,
        method: GreenMethod::Spectral,
        error_estimate,
    })
}

fn lattice_value(lattice: &LatticeSpec, values: &[f64], idx: &[usize]) -> f64 {
    values[lattice.flatten(idx)]
}

/// Least-squares fit of `ln G₀(x) = ln A - B |x|` over the nodes with
/// `lo <= |x| <= hi`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub amplitude: f64,
    pub rate: f64,
    pub r_squared: f64,
    pub nodes: usize,
}

pub fn fit_exponential_tail(field: &GreenField, lo: f64, hi: f64) -> Result<TailFit> {
    let mut n = 0usize;
    let (mut sx, mut sy, mut sxx, mut sxy, mut syy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for (i, &v) in field.values.iter().enumerate() {
        let r = field
            .lattice
            .node(i)
            .iter()
            .map(|c| c * c)
            .sum::<f64>()
            .sqrt();
        if r < lo || r > hi {
            continue;
        }
        if v <= 0.0 {
            return Err(Error::Lattice(format!(
                "non-positive G₀ = {v} at |x| = {r}"
            )));
        }
        let y = v.ln();
        n += 1;
        sx += r;
        sy += y;
        sxx += r * r;
        sxy += r * y;
        syy += y * y;
    }
    if n < 3 {
        return Err(Error::InsufficientData(format!(
            "{n} nodes in {lo} <= |x| <= {hi}"
        )));
    }
    let nf = n as f64;
    let cxx = sxx - sx * sx / nf;
    let cxy = sxy - sx * sy / nf;
    let cyy = syy - sy * sy / nf;
    let slope = cxy / cxx;
    let intercept = (sy - slope * sx) / nf;
    let r_squared = if cyy > 0.0 {
        cxy * cxy / (cxx * cyy)
    } else {
        1.0
    };
    Ok(TailFit {
        amplitude: intercept.exp(),
        rate: -slope,
        r_squared,
        nodes: n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const ZETA_3_2: f64 = 2.612_375_348_685_488;

    fn zeta_oracle(b: f64) -> f64 {
        (2.0 * PI * b).powf(-1.5) * ZETA_3_2
    }

    #[test]
    fn single_term_is_the_kernel() {
        let a = JumpKernel::gaussian(3, 1.3).unwrap();
        let x = [0.4, -1.0, 0.2];
        let s = g0_series(&a, &x, 1).unwrap();
        assert!((s.partial_sum - a.density(&x)).abs() < 1e-16);
        assert!(g0_series(&a, &x, 0).is_err());
    }

    #[test]
    fn series_at_origin_matches_zeta() {
        let a = JumpKernel::gaussian(3, 1.0).unwrap();
        let s = g0_series(&a, &[0.0; 3], 10_000).unwrap();
        assert!((s.value() - zeta_oracle(1.0)).abs() < 1e-9, "{}", s.value());
        assert!(zeta_oracle(1.0) - s.partial_sum <= s.tail_bound);
    }

    #[test]
    fn partial_sums_are_monotone() {
        let a = JumpKernel::gaussian(4, 0.8).unwrap();
        let x = [1.0, 0.5, -2.0, 0.0];
        let mut prev = 0.0;
        for k in 1..40 {
            let v = g0_series(&a, &x, k).unwrap().partial_sum;
            assert!(v >= prev);
            prev = v;
        }
    }

    #[test]
    fn spectral_matches_zeta_and_series() {
        let a = JumpKernel::gaussian(3, 1.0).unwrap();
        let lattice = LatticeSpec::new(3, 16.0, 64).unwrap();
        let field = g0_spectral(&a, &lattice).unwrap();
        assert!(
            (field.origin_value() - zeta_oracle(1.0)).abs() < 1e-4,
            "{}",
            field.origin_value()
        );
        assert!(field.symmetry_defect() < 1e-10);
        assert!(field.values().iter().all(|v| v.is_finite() && *v >= 0.0));
        let mut worst = 0.0f64;
        for i in field.nodes_within(4.0).into_iter().step_by(7) {
            let s = g0_series(&a, &lattice.node(i), 4000).unwrap();
            worst = worst.max((s.value() - field.values()[i]).abs());
        }
        assert!(worst < 1e-3, "{worst}");
        assert!(field.error_estimate() < 1e-3);
    }

    #[test]
    fn partial_sum_identity_matches_closed_form() {
        let a = JumpKernel::gaussian(3, 1.0).unwrap();
        let lattice = LatticeSpec::new(3, 32.0, 64).unwrap();
        let spectral = partial_sum_field(&a, &lattice, 5).unwrap();
        let direct = g0_series_field(&a, &lattice, 5).unwrap();
        let gap = spectral
            .values()
            .iter()
            .zip(direct.values())
            .fold(0.0f64, |m, (s, d)| m.max((s - d).abs()));
        assert!(gap < 1e-12, "{gap}");
    }

    #[test]
    fn lattice_convolution_matches_transform_identity() {
        let a = JumpKernel::exponential_tail(3, 2.0).unwrap();
        let lattice = LatticeSpec::new(3, 16.0, 64).unwrap();
        let conv = g0_series_field(&a, &lattice, 3).unwrap();
        let spec = partial_sum_field(&a, &lattice, 3).unwrap();
        let origin = conv.origin_value();
        let gap = conv
            .values()
            .iter()
            .zip(spec.values())
            .fold(0.0f64, |m, (s, d)| m.max((s - d).abs()));
        // the sampled cusp of e^{-δ|x|} limits agreement to the node scale
        assert!(gap < 2e-2 * origin, "gap {gap} vs origin {origin}");
    }

    #[test]
    fn refinement_is_within_the_error_estimate() {
        let a = JumpKernel::gaussian(3, 1.0).unwrap();
        let coarse = g0_spectral(&a, &LatticeSpec::new(3, 16.0, 32).unwrap()).unwrap();
        let fine = g0_spectral(&a, &LatticeSpec::new(3, 16.0, 64).unwrap()).unwrap();
        let n = 32;
        let mut worst = 0.0f64;
        let mut ix = vec![0; 3];
        for j in 0..coarse.values().len() {
            coarse.lattice().unflatten(j, &mut ix);
            if ix.iter().any(|&i| i < n / 4 || i > 3 * n / 4) {
                continue;
            }
            let f: Vec<usize> = ix.iter().map(|&i| 2 * i).collect();
            worst = worst.max((fine.at(&f) - coarse.values()[j]).abs());
        }
        assert!(
            worst <= coarse.error_estimate(),
            "{worst} > {}",
            coarse.error_estimate()
        );
    }

    #[test]
    fn shifted_kernel_is_rejected() {
        let a = JumpKernel::gaussian(3, 1.0)
            .unwrap()
            .shifted(&[0.3, 0.0, 0.0])
            .unwrap();
        let err = g0_spectral(&a, &LatticeSpec::new(3, 8.0, 16).unwrap()).unwrap_err();
        assert!(matches!(err, Error::KernelValidation(ref m) if m.contains("symmetry")));
    }

    #[test]
    fn exponential_tail_field_decays() {
        let a = JumpKernel::exponential_tail(3, 1.0).unwrap();
        let field = g0_spectral(&a, &LatticeSpec::new(3, 16.0, 64).unwrap()).unwrap();
        assert!(field.symmetry_defect() < 1e-10);
        let fit = fit_exponential_tail(&field, 2.0, 6.0).unwrap();
        assert!(fit.rate > 0.0, "{fit:?}");
        assert!(fit.r_squared >= 0.95, "{fit:?}");
        // far from the origin the potential approaches the Newtonian one
        let r = 6.0;
        let g = field.interpolate(&[r, 0.0, 0.0]).unwrap();
        let n = newtonian(3, a.coordinate_variance(), r);
        assert!((g - n).abs() / n < 0.02, "{g} vs {n}");
    }

    #[test]
    fn newtonian_far_field_for_gaussian() {
        let a = JumpKernel::gaussian(3, 1.0).unwrap();
        let s = g0_series(&a, &[7.0, 0.0, 0.0], 20_000).unwrap();
        let n = newtonian(3, 1.0, 7.0);
        assert!((s.value() - n).abs() / n < 1e-6, "{} vs {n}", s.value());
    }

    #[test]
    fn csv_and_summary() {
        let a = JumpKernel::gaussian(3, 1.0).unwrap();
        let field = g0_spectral(&a, &LatticeSpec::new(3, 8.0, 8).unwrap()).unwrap();
        let mut buf = Vec::new();
        field.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 1 + 512);
        assert!(text.starts_with("x0,x1,x2,g0\n"));
        let s = field.summary();
        assert!(s.max >= s.min && s.origin_value == field.origin_value());
    }
    #[test]
    fn radial_series_matches_closed_form() {
        let a = JumpKernel::gaussian(3, 1.0).unwrap();
        for (r, k) in [(0.0, 1), (0.0, 50), (1.3, 50), (3.7, 4000)] {
            let radial = g0_series_radial(&a, r, k).unwrap();
            let direct = g0_series(&a, &[r, 0.0, 0.0], k).unwrap();
            assert!(
                (radial.partial_sum - direct.partial_sum).abs() < 1e-9,
                "r = {r}, K = {k}: {} vs {}",
                radial.partial_sum,
                direct.partial_sum
            );
        }
    }

    #[test]
    fn exponential_tail_spectral_matches_radial_series() {
        let a = JumpKernel::exponential_tail(3, 1.0).unwrap();
        let field = g0_spectral(&a, &LatticeSpec::new(3, 32.0, 64).unwrap()).unwrap();
        let h = field.lattice().spacing();
        for j in [2i64, 4, 8] {
            let r = j as f64 * h;
            let s = g0_series_radial(&a, r, 4000).unwrap();
            let g = field.at_offset(&[j, 0, 0]).unwrap();
            assert!(
                (s.value() - g).abs() < 1e-3 * g,
                "r = {r}: {} vs {g}",
                s.value()
            );
        }
    }
}
