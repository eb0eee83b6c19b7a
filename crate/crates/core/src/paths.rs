//! Seeded trajectories of Brownian motion, fractional Brownian motion and
//! compound Poisson processes.

use std::io::{self, Write};
use std::sync::Arc;

use num_complex::Complex64;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Exp, StandardNormal};
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use crate::cpp::JumpKernel;
use crate::error::{check_dim, invalid, Error, Result};
use crate::rng::{SeedLineage, StreamKey};

/// Grids up to this size may use the dense covariance factorization.
pub const MAX_CHOLESKY: usize = 4096;
/// Grids below this size always use it.
const SMALL_GRID: usize = 64;
/// Hard cap on stored states per path.
pub const MAX_STEPS: usize = 1 << 26;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Process {
    Bm,
    Fbm { hurst: f64 },
    Cpp { rate: f64, kernel: JumpKernel },
}

/// A process family in `R^d` together with its starting point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ProcessSpec {
    dim: usize,
    process: Process,
    start: Vec<f64>,
}

impl ProcessSpec {
    pub fn bm(dim: usize, start: &[f64]) -> Result<Self> {
        Self::new(dim, Process::Bm, start)
    }

    pub fn fbm(dim: usize, hurst: f64, start: &[f64]) -> Result<Self> {
        Self::new(dim, Process::Fbm { hurst }, start)
    }

    pub fn cpp(rate: f64, kernel: JumpKernel, start: &[f64]) -> Result<Self> {
        Self::new(kernel.dim(), Process::Cpp { rate, kernel }, start)
    }

    pub fn new(dim: usize, process: Process, start: &[f64]) -> Result<Self> {
        check_dim(dim, start.len())?;
        if start.iter().any(|v| !v.is_finite()) {
            return Err(invalid("start", "must be finite"));
        }
        match &process {
            Process::Bm if dim < 3 => {
                return Err(Error::Divergent(format!(
                    "Brownian motion is recurrent in d = {dim} < 3"
                )));
            }
            Process::Fbm { hurst } => {
                if !(*hurst > 0.0 && *hurst < 1.0) {
                    return Err(invalid("hurst", format!("{hurst} is outside (0, 1)")));
                }
                if dim as f64 * hurst <= 1.0 {
                    return Err(Error::Divergent(format!(
                        "d = {dim} <= 1/H = {}",
                        1.0 / hurst
                    )));
                }
            }
            Process::Cpp { rate, kernel } => {
                if !(*rate > 0.0 && rate.is_finite()) {
                    return Err(invalid("rate", format!("{rate} must be positive")));
                }
                check_dim(dim, kernel.dim())?;
            }
            _ => {}
        }
        Ok(Self {
            dim,
            process,
            start: start.to_vec(),
        })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn process(&self) -> &Process {
        &self.process
    }

    pub fn start(&self) -> &[f64] {
        &self.start
    }

    /// Same process from another starting point.
    pub fn started_at(&self, start: &[f64]) -> Result<Self> {
        Self::new(self.dim, self.process.clone(), start)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum PathData {
    /// States at `t_i = i dt`, `i = 0..=m`, row-major `(m+1) × d`.
    Grid { dt: f64, states: Vec<f64> },
    /// Jump times in `(0, horizon]` and the states after each jump; the first
    /// row of `states` is the start, so there is one more row than times.
    Events {
        horizon: f64,
        times: Vec<f64>,
        states: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub dim: usize,
    pub lineage: SeedLineage,
    pub data: PathData,
}

impl PathSample {
    /// Number of stored states.
    pub fn len(&self) -> usize {
        match &self.data {
            PathData::Grid { states, .. } | PathData::Events { states, .. } => {
                states.len() / self.dim
            }
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn state(&self, i: usize) -> &[f64] {
        let d = self.dim;
        match &self.data {
            PathData::Grid { states, .. } | PathData::Events { states, .. } => {
                &states[i * d..(i + 1) * d]
            }
        }
    }

    /// Time of state `i`: grid time, or the jump time that produced it.
    pub fn time(&self, i: usize) -> f64 {
        match &self.data {
            PathData::Grid { dt, .. } => i as f64 * dt,
            PathData::Events { times, .. } => {
                if i == 0 {
                    0.0
                } else {
                    times[i - 1]
                }
            }
        }
    }

    pub fn horizon(&self) -> f64 {
        match &self.data {
            PathData::Grid { dt, states } => (states.len() / self.dim - 1) as f64 * dt,
            PathData::Events { horizon, .. } => *horizon,
        }
    }

    /// `X(T)`; for event paths the state in force at the horizon.
    pub fn final_state(&self) -> &[f64] {
        self.state(self.len() - 1)
    }

    /// `X(t)` for a càdlàg event path or the grid state at or before `t`.
    pub fn state_at(&self, t: f64) -> &[f64] {
        match &self.data {
            PathData::Grid { dt, .. } => {
                let i = ((t / dt + 1e-9).floor() as usize).min(self.len() - 1);
                self.state(i)
            }
            PathData::Events { times, .. } => {
                let i = times.partition_point(|&s| s <= t);
                self.state(i)
            }
        }
    }

    /// Every `stride`-th state of a grid path.
    pub fn subsample(&self, stride: usize) -> Result<PathSample> {
        match &self.data {
            PathData::Grid { dt, states } => {
                let steps = self.len() - 1;
                if stride == 0 || steps % stride != 0 {
                    return Err(invalid(
                        "stride",
                        format!("{stride} does not divide {steps} steps"),
                    ));
                }
                let d = self.dim;
                let states = (0..=steps / stride)
                    .flat_map(|i| states[i * stride * d..(i * stride + 1) * d].iter().copied())
                    .collect();
                Ok(PathSample {
                    dim: d,
                    lineage: self.lineage,
                    data: PathData::Grid {
                        dt: dt * stride as f64,
                        states,
                    },
                })
            }
            PathData::Events { .. } => {
                Err(invalid("path", "event paths have no grid to subsample"))
            }
        }
    }

    /// `t,x0,...` rows with 17 significant digits.
    pub fn write_csv<W: Write>(&self, mut w: W) -> io::Result<()> {
        let header: Vec<String> = std::iter::once("t".to_string())
            .chain((0..self.dim).map(|i| format!("x{i}")))
            .collect();
        writeln!(w, "{}", header.join(","))?;
        for i in 0..self.len() {
            write!(w, "{:.16e}", self.time(i))?;
            for v in self.state(i) {
                write!(w, ",{v:.16e}")?;
            }
            writeln!(w)?;
        }
        Ok(())
    }
}

/// Steps of a uniform grid covering `[0, T]` with spacing at most `dt`.
pub fn grid_steps(horizon: f64, dt: f64) -> Result<usize> {
    if !(horizon > 0.0 && horizon.is_finite()) {
        return Err(invalid("T", format!("{horizon} must be positive")));
    }
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(invalid("dt", format!("{dt} must be positive")));
    }
    let steps = (horizon / dt * (1.0 - 1e-12)).ceil().max(1.0);
    if steps > MAX_STEPS as f64 {
        return Err(Error::ResourceCap(format!(
            "{steps} grid steps exceed {MAX_STEPS}; raise dt or lower T"
        )));
    }
    Ok(steps as usize)
}

/// Autocovariance of unit-step fractional Gaussian noise at lag `k`.
pub fn fgn_autocovariance(hurst: f64, k: usize) -> f64 {
    let h2 = 2.0 * hurst;
    let k = k as f64;
    0.5 * ((k + 1.0).powf(h2) - 2.0 * k.powf(h2) + (k - 1.0).abs().powf(h2))
}

enum FgnMethod {
    /// `sqrt(λ_j / 2M)` for the circulant of size `2M`.
    Circulant {
        scale: Vec<f64>,
        fft: Arc<dyn Fft<f64>>,
    },
    /// Lower-triangular factor, row-major `m × m`.
    Cholesky { factor: Vec<f64> },
}

/// Sampler of unit-step fractional Gaussian noise of length `m`, prepared
/// once and reused across replicates.
pub struct FgnGenerator {
    len: usize,
    method: FgnMethod,
}

impl FgnGenerator {
    pub fn new(hurst: f64, len: usize) -> Result<Self> {
        if !(hurst > 0.0 && hurst < 1.0) {
            return Err(invalid("hurst", format!("{hurst} is outside (0, 1)")));
        }
        if len == 0 {
            return Err(invalid("m", "empty grid"));
        }
        if len < SMALL_GRID {
            return Self::cholesky(hurst, len);
        }
        match Self::circulant(hurst, len) {
            Ok(g) => Ok(g),
            Err(e) if len <= MAX_CHOLESKY => Self::cholesky(hurst, len)
                .map_err(|c| Error::Embedding(format!("{e}; fallback: {c}"))),
            Err(e) => Err(e),
        }
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn is_circulant(&self) -> bool {
        matches!(self.method, FgnMethod::Circulant { .. })
    }

    fn circulant(hurst: f64, len: usize) -> Result<Self> {
        let half = len.next_power_of_two();
        let size = 2 * half;
        let mut row: Vec<Complex64> = (0..size)
            .map(|j| {
                let lag = if j <= half { j } else { size - j };
                Complex64::new(fgn_autocovariance(hurst, lag), 0.0)
            })
            .collect();
        let fft = FftPlanner::new().plan_fft_forward(size);
        fft.process(&mut row);
        let top = row.iter().fold(0.0f64, |m, c| m.max(c.re));
        let mut scale = Vec::with_capacity(size);
        for c in &row {
            if c.re < -1e-10 * top {
                return Err(Error::Embedding(format!(
                    "circulant of size {size} has eigenvalue {:.3e}",
                    c.re
                )));
            }
            scale.push((c.re.max(0.0) / size as f64).sqrt());
        }
        Ok(Self {
            len,
            method: FgnMethod::Circulant { scale, fft },
        })
    }

    fn cholesky(hurst: f64, len: usize) -> Result<Self> {
        if len > MAX_CHOLESKY {
            return Err(Error::Embedding(format!(
                "{len} points is too many for a dense factorization"
            )));
        }
        let mut l = vec![0.0; len * len];
        for i in 0..len {
            for j in 0..=i {
                let mut s = fgn_autocovariance(hurst, i - j);
                for k in 0..j {
                    s -= l[i * len + k] * l[j * len + k];
                }
                if i == j {
                    if s <= 0.0 {
                        return Err(Error::Embedding(format!(
                            "covariance not positive definite at row {i}"
                        )));
                    }
                    l[i * len + i] = s.sqrt();
                } else {
                    l[i * len + j] = s / l[j * len + j];
                }
            }
        }
        Ok(Self {
            len,
            method: FgnMethod::Cholesky { factor: l },
        })
    }

    /// Two independent noise vectors of length `m` from one draw.
    pub fn sample_pair(&self, rng: &mut ChaCha8Rng) -> (Vec<f64>, Vec<f64>) {
        match &self.method {
            FgnMethod::Circulant { scale, fft } => {
                let mut buf: Vec<Complex64> = scale
                    .iter()
                    .map(|s| {
                        let re: f64 = rng.sample(StandardNormal);
                        let im: f64 = rng.sample(StandardNormal);
                        Complex64::new(s * re, s * im)
                    })
                    .collect();
                fft.process(&mut buf);
                let a = buf[..self.len].iter().map(|c| c.re).collect();
                let b = buf[..self.len].iter().map(|c| c.im).collect();
                (a, b)
            }
            FgnMethod::Cholesky { factor } => (
                self.cholesky_draw(factor, rng),
                self.cholesky_draw(factor, rng),
            ),
        }
    }

    fn cholesky_draw(&self, factor: &[f64], rng: &mut ChaCha8Rng) -> Vec<f64> {
        let m = self.len;
        let z: Vec<f64> = (0..m).map(|_| rng.sample(StandardNormal)).collect();
        (0..m)
            .map(|i| (0..=i).map(|k| factor[i * m + k] * z[k]).sum())
            .collect()
    }
}

/// Path sampler for one `(spec, T, dt)`, holding any precomputed state.
pub struct PathSampler {
    spec: ProcessSpec,
    horizon: f64,
    steps: usize,
    dt: f64,
    fgn: Option<FgnGenerator>,
}

impl PathSampler {
    /// `dt` is ignored for compound Poisson paths, which are event-driven.
    pub fn new(spec: &ProcessSpec, horizon: f64, dt: f64) -> Result<Self> {
        let (steps, dt) = match spec.process {
            Process::Cpp { .. } => {
                if !(horizon > 0.0 && horizon.is_finite()) {
                    return Err(invalid("T", format!("{horizon} must be positive")));
                }
                (0, 0.0)
            }
            _ => {
                let m = grid_steps(horizon, dt)?;
                (m, horizon / m as f64)
            }
        };
        let fgn = match spec.process {
            Process::Fbm { hurst } => Some(FgnGenerator::new(hurst, steps)?),
            _ => None,
        };
        Ok(Self {
            spec: spec.clone(),
            horizon,
            steps,
            dt,
            fgn,
        })
    }

    pub fn spec(&self) -> &ProcessSpec {
        &self.spec
    }

    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    /// Grid spacing actually used (`T / m`).
    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn steps(&self) -> usize {
        self.steps
    }

    pub fn sample(&self, lineage: SeedLineage) -> PathSample {
        let mut rng = StreamKey::paths(lineage).rng();
        let d = self.spec.dim;
        let data = match &self.spec.process {
            Process::Bm => {
                let m = self.steps;
                let s = self.dt.sqrt();
                let mut states = Vec::with_capacity((m + 1) * d);
                states.extend_from_slice(&self.spec.start);
                for i in 0..m {
                    for k in 0..d {
                        let z: f64 = rng.sample(StandardNormal);
                        let prev = states[i * d + k];
                        states.push(prev + s * z);
                    }
                }
                PathData::Grid {
                    dt: self.dt,
                    states,
                }
            }
            Process::Fbm { hurst } => {
                let m = self.steps;
                let gen = self
                    .fgn
                    .as_ref()
                    .expect("fBm sampler has a noise generator");
                let scale = self.dt.powf(*hurst);
                let mut states = vec![0.0; (m + 1) * d];
                states[..d].copy_from_slice(&self.spec.start);
                let mut k = 0;
                while k < d {
                    let (a, b) = gen.sample_pair(&mut rng);
                    for (coord, noise) in [(k, a), (k + 1, b)] {
                        if coord >= d {
                            break;
                        }
                        let mut acc = self.spec.start[coord];
                        for (i, z) in noise.iter().enumerate() {
                            acc += scale * z;
                            states[(i + 1) * d + coord] = acc;
                        }
                    }
                    k += 2;
                }
                PathData::Grid {
                    dt: self.dt,
                    states,
                }
            }
            Process::Cpp { rate, kernel } => {
                let wait = Exp::new(*rate).expect("rate is positive");
                let mut times = Vec::new();
                let mut states = self.spec.start.clone();
                let mut jump = vec![0.0; d];
                let mut t: f64 = rng.sample(wait);
                while t <= self.horizon {
                    times.push(t);
                    kernel.sample_jump(&mut rng, &mut jump);
                    let base = states.len() - d;
                    for k in 0..d {
                        let v = states[base + k] + jump[k];
                        states.push(v);
                    }
                    t += rng.sample(wait);
                }
                PathData::Events {
                    horizon: self.horizon,
                    times,
                    states,
                }
            }
        };
        PathSample {
            dim: d,
            lineage,
            data,
        }
    }
}

fn require(spec: &ProcessSpec, want: &str) -> Result<()> {
    let ok = matches!(
        (&spec.process, want),
        (Process::Bm, "bm") | (Process::Fbm { .. }, "fbm") | (Process::Cpp { .. }, "cpp")
    );
    if ok {
        Ok(())
    } else {
        Err(invalid("spec", format!("expected a {want} process")))
    }
}

pub fn sample_bm(
    spec: &ProcessSpec,
    horizon: f64,
    dt: f64,
    lineage: SeedLineage,
) -> Result<PathSample> {
    require(spec, "bm")?;
    Ok(PathSampler::new(spec, horizon, dt)?.sample(lineage))
}

pub fn sample_fbm(
    spec: &ProcessSpec,
    horizon: f64,
    dt: f64,
    lineage: SeedLineage,
) -> Result<PathSample> {
    require(spec, "fbm")?;
    Ok(PathSampler::new(spec, horizon, dt)?.sample(lineage))
}

pub fn sample_cpp(spec: &ProcessSpec, horizon: f64, lineage: SeedLineage) -> Result<PathSample> {
    require(spec, "cpp")?;
    Ok(PathSampler::new(spec, horizon, 0.0)?.sample(lineage))
}

/// Fraction of paths with `|X(T)| > radius` at each path's horizon.
pub fn transience_diagnostic(paths: &[PathSample], radius: f64) -> Result<f64> {
    if paths.is_empty() {
        return Err(Error::InsufficientData("no paths".into()));
    }
    let far = paths
        .iter()
        .filter(|p| p.final_state().iter().map(|v| v * v).sum::<f64>().sqrt() > radius)
        .count();
    Ok(far as f64 / paths.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn lineage(i: u64) -> SeedLineage {
        SeedLineage {
            master: 42,
            replicate: i,
        }
    }

    #[test]
    fn starts_at_x_and_is_deterministic() {
        let x = [1.0, -2.0, 0.5];
        let spec = ProcessSpec::bm(3, &x).unwrap();
        let p = sample_bm(&spec, 1.0, 0.1, lineage(3)).unwrap();
        assert_eq!(p.state(0), &x);
        assert_eq!(p.len(), 11);
        assert_eq!(p, sample_bm(&spec, 1.0, 0.1, lineage(3)).unwrap());
        assert_ne!(p, sample_bm(&spec, 1.0, 0.1, lineage(4)).unwrap());
        assert!((p.horizon() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn invalid_specs() {
        assert!(ProcessSpec::bm(2, &[0.0; 2]).is_err());
        assert!(ProcessSpec::fbm(3, 0.3, &[0.0; 3]).is_err());
        assert!(ProcessSpec::fbm(3, 1.0, &[0.0; 3]).is_err());
        let k = JumpKernel::gaussian(3, 1.0).unwrap();
        assert!(ProcessSpec::cpp(0.0, k, &[0.0; 3]).is_err());
        let spec = ProcessSpec::bm(3, &[0.0; 3]).unwrap();
        assert!(sample_bm(&spec, -1.0, 0.1, lineage(0)).is_err());
        assert!(sample_bm(&spec, 1.0, 0.0, lineage(0)).is_err());
    }

    #[test]
    fn fgn_autocovariance_at_half_is_white() {
        assert_eq!(fgn_autocovariance(0.5, 0), 1.0);
        for k in 1..5 {
            assert!(fgn_autocovariance(0.5, k).abs() < 1e-15);
        }
    }

    #[test]
    fn circulant_and_cholesky_agree_in_covariance() {
        // the empirical covariance of both methods matches the exact one
        for hurst in [0.3, 0.75] {
            let m = 80;
            let circ = FgnGenerator::circulant(hurst, m).unwrap();
            let chol = FgnGenerator::cholesky(hurst, m).unwrap();
            for g in [circ, chol] {
                let mut rng = StreamKey::new(1, crate::rng::Domain::Validation, 0).rng();
                let n = 20_000;
                let (mut c0, mut c1, mut c5) = (0.0, 0.0, 0.0);
                for _ in 0..n {
                    let (a, b) = g.sample_pair(&mut rng);
                    for v in [a, b] {
                        c0 += v[10] * v[10];
                        c1 += v[10] * v[11];
                        c5 += v[10] * v[15];
                    }
                }
                let n2 = 2.0 * n as f64;
                let tol = 4.0 * (2.0 / n2).sqrt();
                assert!((c0 / n2 - 1.0).abs() < tol);
                assert!((c1 / n2 - fgn_autocovariance(hurst, 1)).abs() < tol);
                assert!((c5 / n2 - fgn_autocovariance(hurst, 5)).abs() < tol);
            }
        }
    }

    #[test]
    fn small_grids_use_the_factorization() {
        assert!(!FgnGenerator::new(0.7, 10).unwrap().is_circulant());
        assert!(FgnGenerator::new(0.7, 1000).unwrap().is_circulant());
    }

    #[test]
    fn cpp_without_events_stays_put() {
        let k = JumpKernel::gaussian(3, 1.0).unwrap();
        let spec = ProcessSpec::cpp(1e-9, k, &[1.0, 2.0, 3.0]).unwrap();
        let p = sample_cpp(&spec, 1.0, lineage(0)).unwrap();
        assert_eq!(p.len(), 1);
        assert_eq!(p.final_state(), &[1.0, 2.0, 3.0]);
        assert_eq!(p.state_at(0.7), &[1.0, 2.0, 3.0]);
    }

    #[test]
    fn cpp_is_right_continuous() {
        let k = JumpKernel::gaussian(3, 1.0).unwrap();
        let spec = ProcessSpec::cpp(1.0, k, &[0.0; 3]).unwrap();
        let p = sample_cpp(&spec, 20.0, lineage(5)).unwrap();
        assert!(p.len() > 2);
        let t1 = p.time(1);
        assert_eq!(p.state_at(t1), p.state(1));
        assert_eq!(p.state_at(t1 - 1e-12), p.state(0));
    }

    #[test]
    fn transience_edge_cases() {
        let spec = ProcessSpec::bm(3, &[0.0; 3]).unwrap();
        let paths: Vec<_> = (0..200)
            .map(|i| sample_bm(&spec, 1e-6, 1e-6, lineage(i)).unwrap())
            .collect();
        assert_eq!(transience_diagnostic(&paths, 0.0).unwrap(), 1.0);
        assert_eq!(transience_diagnostic(&paths, 0.1).unwrap(), 0.0);
        assert!(transience_diagnostic(&[], 1.0).is_err());
    }

    #[test]
    fn csv_dump() {
        let spec = ProcessSpec::bm(3, &[0.0; 3]).unwrap();
        let p = sample_bm(&spec, 1.0, 0.5, lineage(0)).unwrap();
        let mut buf = Vec::new();
        p.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(text.lines().count(), 4);
        assert!(text.starts_with("t,x0,x1,x2\n"));
    }
}
