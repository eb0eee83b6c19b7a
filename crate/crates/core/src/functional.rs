//! Truncated perpetual integrals `Y_T(f) = ∫_0^T f(X(t)) dt`, the analytic
//! control of the truncation error, and occupation measures of paths.

use std::f64::consts::PI;
use std::io::{self, Write};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::funcs::TestFunction;
use crate::paths::{PathData, PathSample, Process, ProcessSpec};
use crate::quad::{integrate, integrate_to_infinity, QuadResult, Tolerance};
use crate::rng::{SeedLineage, StreamKey};
use crate::special::heat_tail;

/// Smallest horizon an adaptive policy returns.
pub const T_MIN: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum HorizonMode {
    Fixed { horizon: f64 },
    Adaptive { eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HorizonPolicy {
    pub mode: HorizonMode,
    pub resolved_t: f64,
    /// Upper bound on `E ∫_T^∞ f(X(t)) dt`.
    pub tail_bound_at_t: f64,
}

/// Upper bound on `E ∫_T^∞ f(X(t)) dt` from the envelope
/// `E f(X(t)) <= ‖f‖₁ sup_y p_t(y)` of the transition density.
pub fn tail_bound(f: &TestFunction, spec: &ProcessSpec, horizon: f64) -> Result<f64> {
    check_dim(spec.dim(), f.dim())?;
    if !(horizon > 0.0) {
        return Err(invalid("T", format!("{horizon} must be positive")));
    }
    let norms = f.cl_norm()?;
    let l1 = norms.l1_norm;
    let d = spec.dim() as f64;
    let envelope = l1 * (2.0 * PI).powf(-d / 2.0);
    Ok(match spec.process() {
        Process::Bm => envelope * horizon.powf(1.0 - d / 2.0) / (d / 2.0 - 1.0),
        Process::Fbm { hurst } => {
            let e = d * hurst;
            envelope * horizon.powf(1.0 - e) / (e - 1.0)
        }
        Process::Cpp { rate, kernel } => {
            // holding time at the start, then a^{*n} <= A n^{-p} and
            // E[N^{-p}; N >= 1] <= ((m+1)!)^{p/m} (λt)^{-p} with m = ⌈p⌉
            let p = d / 2.0;
            let m = p.ceil();
            let factorial: f64 = (1..=(m as u64 + 1)).map(|k| k as f64).product();
            let c_p = factorial.powf(p / m);
            let a = kernel.convolution_peak_coefficient();
            norms.sup_norm * (-rate * horizon).exp() / rate
                + l1 * a * c_p * rate.powf(-p) * horizon.powf(1.0 - p) / (p - 1.0)
        }
    })
}

pub fn fixed_horizon(f: &TestFunction, spec: &ProcessSpec, horizon: f64) -> Result<HorizonPolicy> {
    Ok(HorizonPolicy {
        mode: HorizonMode::Fixed { horizon },
        resolved_t: horizon,
        tail_bound_at_t: tail_bound(f, spec, horizon)?,
    })
}

/// Smallest `T >= T_MIN` whose tail bound is at most `eps`.
pub fn adaptive_horizon(f: &TestFunction, spec: &ProcessSpec, eps: f64) -> Result<HorizonPolicy> {
    if !(eps > 0.0 && eps.is_finite()) {
        return Err(invalid("eps", format!("{eps} must be positive")));
    }
    check_dim(spec.dim(), f.dim())?;
    let l1 = f.cl_norm()?.l1_norm;
    let d = spec.dim() as f64;
    let envelope = l1 * (2.0 * PI).powf(-d / 2.0);
    let t = match spec.process() {
        Process::Bm => (envelope / ((d / 2.0 - 1.0) * eps)).powf(2.0 / (d - 2.0)),
        Process::Fbm { hurst } => {
            let e = d * hurst;
            (envelope / ((e - 1.0) * eps)).powf(1.0 / (e - 1.0))
        }
        Process::Cpp { .. } => {
            // the bound decreases in T: bracket, then bisect
            let mut hi = T_MIN;
            while tail_bound(f, spec, hi)? > eps {
                hi *= 2.0;
                if hi > 1e15 {
                    return Err(Error::ResourceCap(format!(
                        "no horizon below 1e15 reaches eps = {eps}"
                    )));
                }
            }
            let mut lo = hi / 2.0;
            for _ in 0..100 {
                let mid = 0.5 * (lo + hi);
                if tail_bound(f, spec, mid)? > eps {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            hi
        }
    };
    let resolved_t = if t.is_finite() { t.max(T_MIN) } else { T_MIN };
    Ok(HorizonPolicy {
        mode: HorizonMode::Adaptive { eps },
        resolved_t,
        tail_bound_at_t: tail_bound(f, spec, resolved_t)?,
    })
}

/// `E ∫_T^∞ f(x + B(t)) dt` in closed form for Brownian motion and `f` a
/// combination of Gaussians; `None` for every other pair.
pub fn exact_tail(f: &TestFunction, spec: &ProcessSpec, horizon: f64) -> Result<Option<f64>> {
    check_dim(spec.dim(), f.dim())?;
    if !matches!(spec.process(), Process::Bm) {
        return Ok(None);
    }
    let Some(parts) = f.gaussian_components() else {
        return Ok(None);
    };
    let d = spec.dim();
    let x = spec.start();
    Ok(Some(
        parts
            .iter()
            .map(|(c, mass, v)| {
                let r = x
                    .iter()
                    .zip(c)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt();
                // f * p_t is a Gaussian of variance v + t
                mass * heat_tail(d, 1.0, r, horizon + v)
            })
            .sum(),
    ))
}

/// First two moments of `Y_T(f)` for Brownian motion and `f` a combination
/// of Gaussians (`T = None` for the perpetual integral).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GaussianMoments {
    pub mean: f64,
    pub second_moment: f64,
    pub variance: f64,
    /// Quadrature error bound on the variance.
    pub error: f64,
}

/// `∫ φ_{s1}(y-m1) φ_{s2}(y-m2) φ_{s3}(y-m3) dy` for isotropic normal
/// densities with per-coordinate variances `s_k`.
fn triple_gaussian(s: [f64; 3], m: [&[f64]; 3]) -> f64 {
    let d = m[0].len() as f64;
    let dist2 = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(u, v)| (u - v) * (u - v)).sum::<f64>();
    let p = s[0] * s[1] + s[0] * s[2] + s[1] * s[2];
    let q = s[2] * dist2(m[0], m[1]) + s[1] * dist2(m[0], m[2]) + s[0] * dist2(m[1], m[2]);
    (2.0 * PI).powf(-d) * p.powf(-d / 2.0) * (-q / (2.0 * p)).exp()
}

/// Moments of `∫_0^T f(x + B(t)) dt` from
/// `E f(X_s) f(X_{s+u}) = Σ m_i m_j ∫ φ_s(y-x) φ_{v_i}(y-c_i) φ_{v_j+u}(y-c_j) dy`
/// by nested quadrature over `(s, u)`. `None` unless `f` is all Gaussian.
pub fn bm_gaussian_moments(
    f: &TestFunction,
    x: &[f64],
    horizon: Option<f64>,
) -> Result<Option<GaussianMoments>> {
    let d = f.dim();
    check_dim(d, x.len())?;
    if d < 3 {
        return Err(Error::Divergent(format!(
            "Brownian motion is recurrent in d = {d}"
        )));
    }
    if let Some(t) = horizon {
        if !(t > 0.0) {
            return Err(invalid("T", format!("{t} must be positive")));
        }
    }
    let Some(parts) = f.gaussian_components() else {
        return Ok(None);
    };
    let parts: Vec<_> = parts.into_iter().filter(|p| p.1 != 0.0).collect();
    if parts.is_empty() {
        return Ok(Some(GaussianMoments {
            mean: 0.0,
            second_moment: 0.0,
            variance: 0.0,
            error: 0.0,
        }));
    }
    let mean: f64 = parts
        .iter()
        .map(|(c, m, v)| {
            let r = x
                .iter()
                .zip(c)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let tail = horizon.map_or(0.0, |t| heat_tail(d, 1.0, r, v + t));
            m * (heat_tail(d, 1.0, r, *v) - tail)
        })
        .sum();
    let pair = |s: f64, u: f64| -> f64 {
        let mut acc = 0.0;
        for (ci, mi, vi) in &parts {
            for (cj, mj, vj) in &parts {
                acc += mi * mj * triple_gaussian([s, *vi, vj + u], [x, ci, cj]);
            }
        }
        acc
    };
    let tol = Tolerance::rel(1e-10);
    let inner = |s: f64| -> Result<QuadResult> {
        match horizon {
            Some(t) if t - s <= 0.0 => Ok(QuadResult {
                value: 0.0,
                error: 0.0,
            }),
            Some(t) => integrate(|u| pair(s, u), 0.0, t - s, tol),
            None => integrate_to_infinity(|u| pair(s, u), 0.0, tol),
        }
    };
    let inner_error = std::cell::Cell::new(0.0f64);
    let failure = std::cell::Cell::new(None);
    let outer_fn = |s: f64| match inner(s) {
        Ok(q) => {
            inner_error.set(inner_error.get().max(q.error / q.value.abs().max(1e-300)));
            q.value
        }
        Err(e) => {
            failure.set(Some(e));
            0.0
        }
    };
    let outer_tol = Tolerance::rel(1e-9);
    let outer = match horizon {
        Some(t) => integrate(outer_fn, 0.0, t, outer_tol)?,
        None => integrate_to_infinity(outer_fn, 0.0, outer_tol)?,
    };
    if let Some(e) = failure.take() {
        return Err(e);
    }
    let second_moment = 2.0 * outer.value;
    let second_error = 2.0 * (outer.error + inner_error.get() * outer.value.abs());
    // the mean is closed form up to the accuracy of heat_tail
    let mean_error = 1e-13 * mean.abs();
    Ok(Some(GaussianMoments {
        mean,
        second_moment,
        variance: second_moment - mean * mean,
        error: second_error + 2.0 * mean.abs() * mean_error,
    }))
}

/// `∫_0^T f(X(t)) dt`: composite trapezoid on grid paths, the exact sum
/// of `f(state) × holding time` on event paths.
pub fn integrate_path(path: &PathSample, f: &TestFunction) -> Result<f64> {
    check_dim(f.dim(), path.dim)?;
    Ok(match &path.data {
        PathData::Grid { dt, .. } => {
            let m = path.len() - 1;
            if m == 0 {
                return Ok(0.0);
            }
            let mut acc = 0.5 * f.value(path.state(0));
            for i in 1..m {
                acc += f.value(path.state(i));
            }
            acc += 0.5 * f.value(path.state(m));
            dt * acc
        }
        PathData::Events { horizon, times, .. } => {
            let mut sum = 0.0;
            let mut prev = 0.0;
            for (i, &t) in times.iter().enumerate() {
                sum += f.value(path.state(i)) * (t - prev);
                prev = t;
            }
            sum + f.value(path.state(times.len())) * (horizon - prev)
        }
    })
}

/// Per-node quadrature weights (time units) of a path: trapezoid weights on
/// a grid, holding times on an event path.
fn node_weights(path: &PathSample) -> Vec<f64> {
    match &path.data {
        PathData::Grid { dt, .. } => {
            let m = path.len() - 1;
            (0..=m)
                .map(|i| {
                    if m == 0 {
                        0.0
                    } else if i == 0 || i == m {
                        0.5 * dt
                    } else {
                        *dt
                    }
                })
                .collect()
        }
        PathData::Events { horizon, times, .. } => {
            let mut w = Vec::with_capacity(times.len() + 1);
            let mut prev = 0.0;
            for &t in times {
                w.push(t - prev);
                prev = t;
            }
            w.push(horizon - prev);
            w
        }
    }
}

/// Time a path spends in each cell of a box, plus the time outside it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OccupationHistogram {
    pub lower: Vec<f64>,
    pub upper: Vec<f64>,
    pub bins: usize,
    /// Row-major `bins^d` cell measures.
    pub measure: Vec<f64>,
    pub overflow: f64,
    pub horizon: f64,
}

impl OccupationHistogram {
    pub fn dim(&self) -> usize {
        self.lower.len()
    }

    pub fn cell_center(&self, flat: usize) -> Vec<f64> {
        let d = self.dim();
        let mut idx = vec![0; d];
        let mut rest = flat;
        for slot in idx.iter_mut().rev() {
            *slot = rest % self.bins;
            rest /= self.bins;
        }
        (0..d)
            .map(|k| {
                let w = (self.upper[k] - self.lower[k]) / self.bins as f64;
                self.lower[k] + (idx[k] as f64 + 0.5) * w
            })
            .collect()
    }

    /// Diameter of one cell.
    pub fn cell_diameter(&self) -> f64 {
        (0..self.dim())
            .map(|k| ((self.upper[k] - self.lower[k]) / self.bins as f64).powi(2))
            .sum::<f64>()
            .sqrt()
    }

    /// `Σ_cells f(center) μ(cell)`.
    pub fn riemann_sum(&self, f: &TestFunction) -> f64 {
        self.measure
            .iter()
            .enumerate()
            .filter(|(_, m)| **m > 0.0)
            .map(|(i, m)| f.value(&self.cell_center(i)) * m)
            .sum()
    }

    pub fn total(&self) -> f64 {
        self.measure.iter().sum::<f64>() + self.overflow
    }

    /// `c0,...,measure` rows for the non-empty cells.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header: Vec<String> = (0..self.dim())
            .map(|i| format!("c{i}"))
            .chain(["measure".to_string()])
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for (i, m) in self.measure.iter().enumerate() {
            if *m == 0.0 {
                continue;
            }
            for c in self.cell_center(i) {
                write!(w, "{c:.16e},")?;
            }
            writeln!(w, "{m:.16e}")?;
        }
        writeln!(w, "# overflow {:.16e}", self.overflow)
    }
}

/// Largest number of histogram cells.
pub const MAX_CELLS: usize = 1 << 24;

pub fn occupation_histogram(
    path: &PathSample,
    lower: &[f64],
    upper: &[f64],
    bins: usize,
) -> Result<OccupationHistogram> {
    let d = path.dim;
    check_dim(d, lower.len())?;
    check_dim(d, upper.len())?;
    if lower
        .iter()
        .zip(upper)
        .any(|(l, u)| !(u > l) || !l.is_finite() || !u.is_finite())
    {
        return Err(invalid(
            "box",
            "every side must have positive finite length",
        ));
    }
    if bins == 0 {
        return Err(invalid("bins", "need at least one bin per side"));
    }
    let cells = (bins as u128).pow(d as u32);
    if cells > MAX_CELLS as u128 {
        return Err(Error::ResourceCap(format!(
            "{bins}^{d} cells exceed {MAX_CELLS}"
        )));
    }
    let mut measure = vec![0.0; cells as usize];
    let mut overflow = 0.0;
    for (i, w) in node_weights(path).into_iter().enumerate() {
        let x = path.state(i);
        let mut flat = 0usize;
        let mut inside = true;
        for k in 0..d {
            let u = (x[k] - lower[k]) / (upper[k] - lower[k]);
            if !(0.0..1.0).contains(&u) {
                inside = false;
                break;
            }
            flat = flat * bins + ((u * bins as f64) as usize).min(bins - 1);
        }
        if inside {
            measure[flat] += w;
        } else {
            overflow += w;
        }
    }
    Ok(OccupationHistogram {
        lower: lower.to_vec(),
        upper: upper.to_vec(),
        bins,
        measure,
        overflow,
        horizon: path.horizon(),
    })
}

/// Far-field leaps for Brownian paths.
///
/// Outside a set of balls the integrand is below `threshold`. From distance
/// `D` to the nearest ball the path stays out for a time
/// `τ = D² / (2d ln(4d / δ))` except with probability `δ`, so the grid
/// states inside such a stretch contribute at most `threshold` each and the
/// endpoint can be drawn exactly as `X + N(0, τ I)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FarFieldSkip {
    balls: Vec<(Vec<f64>, f64)>,
    threshold: f64,
    /// `2d ln(4d / δ)`.
    leap_divisor: f64,
}

/// Per-leap probability that the path enters a ball during a leap.
pub const LEAP_FAILURE: f64 = 1e-16;

impl FarFieldSkip {
    /// Negligibility threshold `relative × sup f`.
    pub fn new(f: &TestFunction, relative: f64) -> Result<Self> {
        if !(relative > 0.0) {
            return Err(invalid("relative", "must be positive"));
        }
        let sup = f.cl_norm()?.sup_norm;
        let threshold = relative * sup;
        let d = f.dim() as f64;
        Ok(Self {
            balls: f.negligible_beyond(threshold),
            threshold,
            leap_divisor: 2.0 * d * (4.0 * d / LEAP_FAILURE).ln(),
        })
    }

    fn distance(&self, x: &[f64]) -> f64 {
        self.balls
            .iter()
            .map(|(c, r)| {
                x.iter()
                    .zip(c)
                    .map(|(a, b)| (a - b) * (a - b))
                    .sum::<f64>()
                    .sqrt()
                    - r
            })
            .fold(f64::INFINITY, f64::min)
    }
}

/// Result of a streamed Brownian path integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StreamedIntegral {
    pub value: f64,
    /// Grid states skipped by far-field leaps.
    pub skipped: u64,
    /// `threshold × dt × skipped`.
    pub skip_error_bound: f64,
}

/// `∫_0^T f(x + B(t)) dt` by the trapezoid rule on `steps` steps of `dt`,
/// generating the path on the fly. Without `skip` the draws and the result
/// match [`crate::paths::PathSampler`] followed by [`integrate_path`].
///
/// `record`, when given, receives `t, x0, ..., x_{d-1}` for every visited
/// grid state.
pub fn integrate_bm_streaming(
    f: &TestFunction,
    start: &[f64],
    steps: usize,
    dt: f64,
    lineage: SeedLineage,
    skip: Option<&FarFieldSkip>,
    mut record: Option<&mut Vec<f64>>,
) -> StreamedIntegral {
    let mut rng = StreamKey::paths(lineage).rng();
    let mut x = start.to_vec();
    let s = dt.sqrt();
    let weight = |j: usize| if j == 0 || j == steps { 0.5 } else { 1.0 };
    let mut sum = weight(0) * f.value(&x);
    let mut skipped = 0u64;
    let mut j = 0usize;
    if let Some(r) = record.as_deref_mut() {
        r.push(0.0);
        r.extend_from_slice(&x);
    }
    while j < steps {
        let mut advance = 1usize;
        if let Some(plan) = skip {
            let dist = plan.distance(&x);
            if dist > 0.0 {
                let tau = dist * dist / plan.leap_divisor;
                let k = ((tau / dt).floor() as usize).min(steps - j);
                if k >= 2 {
                    advance = k;
                }
            }
        }
        let scale = if advance == 1 {
            s
        } else {
            (advance as f64 * dt).sqrt()
        };
        for v in x.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v += scale * z;
        }
        skipped += (advance - 1) as u64;
        j += advance;
        sum += weight(j) * f.value(&x);
        if let Some(r) = record.as_deref_mut() {
            r.push(j as f64 * dt);
            r.extend_from_slice(&x);
        }
    }
    let threshold = skip.map_or(0.0, |p| p.threshold);
    StreamedIntegral {
        value: dt * sum,
        skipped,
        skip_error_bound: threshold * dt * skipped as f64,
    }
}
