//! Monte Carlo harness: replicate paths, estimate, compare against the
//! analytic moments and test non-degeneracy.

use std::io::{self, Write};
use std::time::Instant;

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::cpp::{cpp_expectation, cpp_variance, g0_spectral};
use crate::error::{check_dim, invalid, Error, Result};
use crate::funcs::{McBudget, TestFunction};
use crate::functional::{
    bm_gaussian_moments, exact_tail, integrate_bm_streaming, integrate_path, FarFieldSkip,
    HorizonPolicy,
};
use crate::kernels::{bm_expectation, bm_moments, fbm_moments, VarianceBudget};
use crate::lattice::LatticeSpec;
use crate::paths::{PathSample, PathSampler, Process, ProcessSpec};
use crate::rng::{Domain, SeedLineage, StreamKey};
use crate::special::Z_99;
use crate::stats::Moments;

/// Bootstrap resamples of the sample variance.
pub const BOOTSTRAP_RESAMPLES: usize = 1000;
/// Pass threshold on `|z|`.
pub const Z_PASS: f64 = 3.0;
/// Smallest replicate count for the non-degeneracy test.
pub const MIN_NONDEGENERACY_N: usize = 100;
/// Cap on `n × steps × d` (or expected events) per experiment.
pub const MAX_WORK: f64 = 2e11;
/// Integrand threshold, relative to `sup f`, below which Brownian far-field
/// stretches are skipped.
pub const SKIP_THRESHOLD: f64 = 1e-14;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Verdict {
    #[serde(rename = "pass")]
    Pass,
    #[serde(rename = "fail")]
    Fail,
    #[serde(rename = "n/a")]
    NotApplicable,
}

impl Verdict {
    fn from_z(z: f64) -> Self {
        if z.abs() <= Z_PASS {
            Verdict::Pass
        } else {
            Verdict::Fail
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Verdict::Pass => "pass",
            Verdict::Fail => "fail",
            Verdict::NotApplicable => "n/a",
        }
    }
}

/// Analytic moments of the perpetual integral `Y(f)` started at `x`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticReference {
    pub mean: f64,
    pub mean_error: f64,
    pub variance: Option<f64>,
    pub variance_error: Option<f64>,
    /// `sup_y E_y Y(f)`, when known; bounds how much truncation can move
    /// the variance.
    pub peak_potential: Option<f64>,
}

/// Numerical budgets for [`analytic_reference`].
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AnalyticOptions {
    pub mean_samples: usize,
    pub variance_samples: usize,
    pub variance_rel_error: f64,
    pub seed: u64,
    /// Side length of the Green-function lattice (compound Poisson).
    pub lattice_extent: f64,
    /// Nodes per side of the Green-function lattice.
    pub lattice_points: usize,
}

impl Default for AnalyticOptions {
    fn default() -> Self {
        Self {
            mean_samples: 1 << 20,
            variance_samples: 1 << 22,
            variance_rel_error: 1e-3,
            seed: 0x5eed,
            lattice_extent: 16.0,
            lattice_points: 64,
        }
    }
}

impl AnalyticOptions {
    fn mean_budget(&self) -> McBudget {
        McBudget {
            samples: self.mean_samples.max(2),
            seed: self.seed,
        }
    }

    fn variance_budget(&self) -> VarianceBudget {
        VarianceBudget {
            max_samples: self.variance_samples.max(2),
            target_rel_error: self.variance_rel_error,
            seed: self.seed,
        }
    }
}

/// Analytic mean and, where a formula exists, variance of `Y(f)` for the
/// process in `spec`. `None` when the pair has no analytic support.
///
/// Compound Poisson moments scale as `1/λ` (mean) and `1/λ²` (variance)
/// from the unit-rate formulas by the time change `t → λt`.
pub fn analytic_reference(
    spec: &ProcessSpec,
    f: &TestFunction,
    options: &AnalyticOptions,
) -> Result<Option<AnalyticReference>> {
    check_dim(spec.dim(), f.dim())?;
    let x = spec.start();
    let d = spec.dim();
    Ok(Some(match spec.process() {
        Process::Bm => {
            let m = bm_moments(f, x, options.variance_budget())?;
            let peak = match f.radial_center() {
                Some(c) => Some(bm_expectation(f, c, d, options.mean_budget())?.value),
                None => None,
            };
            AnalyticReference {
                mean: m.mean,
                mean_error: m.mean_error,
                variance: m.variance,
                variance_error: m.variance_error,
                peak_potential: peak,
            }
        }
        Process::Fbm { hurst } => {
            let m = fbm_moments(f, x, *hurst, options.mean_budget())?;
            AnalyticReference {
                mean: m.mean,
                mean_error: m.mean_error,
                variance: None,
                variance_error: None,
                peak_potential: None,
            }
        }
        Process::Cpp { rate, kernel } => {
            let lattice = LatticeSpec::new(d, options.lattice_extent, options.lattice_points)?;
            let field = g0_spectral(kernel, &lattice)?;
            let mean = cpp_expectation(f, x, kernel, &field)?;
            let var = cpp_variance(
                f,
                x,
                kernel,
                &field,
                McBudget {
                    samples: options.variance_samples.max(2),
                    seed: options.seed,
                },
            )?;
            let peak = match f.radial_center() {
                Some(c) => Some(cpp_expectation(f, c, kernel, &field)?.value / rate),
                None => None,
            };
            AnalyticReference {
                mean: mean.value / rate,
                mean_error: mean.error / rate,
                variance: Some(var.with_atom.value / (rate * rate)),
                variance_error: Some(var.with_atom.error / (rate * rate)),
                peak_potential: peak,
            }
        }
    }))
}

/// One Monte Carlo experiment: `n` independent replicates of `Y_T(f)`.
#[derive(Debug, Clone, PartialEq)]
pub struct Experiment {
    pub spec: ProcessSpec,
    pub f: TestFunction,
    pub n: usize,
    pub policy: HorizonPolicy,
    /// Grid step for continuous paths; ignored for compound Poisson.
    pub dt: f64,
    pub seed: u64,
    /// Leap over Brownian stretches far from the support of `f`.
    pub far_field_skip: bool,
}

impl Experiment {
    fn lineage(&self, replicate: u64) -> SeedLineage {
        SeedLineage {
            master: self.seed,
            replicate,
        }
    }

    fn validate(&self) -> Result<PathSampler> {
        check_dim(self.spec.dim(), self.f.dim())?;
        if self.n < 2 {
            return Err(invalid(
                "n",
                format!("{} replicates; need at least 2", self.n),
            ));
        }
        let sampler = PathSampler::new(&self.spec, self.policy.resolved_t, self.dt)?;
        let per_path = match self.spec.process() {
            Process::Cpp { rate, .. } => rate * self.policy.resolved_t + 1.0,
            _ => (sampler.steps() * self.spec.dim()) as f64,
        };
        let work = per_path * self.n as f64;
        if work > MAX_WORK {
            let partial = (MAX_WORK / per_path).floor() as u64;
            return Err(Error::ResourceCap(format!(
                "{} replicates need {work:.3e} units of work (cap {MAX_WORK:.1e}); at most {partial} fit",
                self.n
            )));
        }
        Ok(sampler)
    }

    fn skip(&self) -> Result<Option<FarFieldSkip>> {
        if self.far_field_skip && matches!(self.spec.process(), Process::Bm) {
            Ok(Some(FarFieldSkip::new(&self.f, SKIP_THRESHOLD)?))
        } else {
            Ok(None)
        }
    }

    /// Replicate `i` as `t,x0,...` rows: the visited grid states for
    /// Brownian runs with leaps, the full path otherwise.
    pub fn write_replicate<W: Write>(&self, i: u64, mut w: W) -> Result<()> {
        let sampler = self.validate()?;
        let io_err = |e: io::Error| Error::ResourceCap(format!("writing path: {e}"));
        if let Some(skip) = self.skip()? {
            let mut rows = Vec::new();
            integrate_bm_streaming(
                &self.f,
                self.spec.start(),
                sampler.steps(),
                sampler.dt(),
                self.lineage(i),
                Some(&skip),
                Some(&mut rows),
            );
            let d = self.spec.dim();
            let header: Vec<String> = std::iter::once("t".to_string())
                .chain((0..d).map(|k| format!("x{k}")))
                .collect();
            writeln!(w, "{}", header.join(",")).map_err(io_err)?;
            for row in rows.chunks(d + 1) {
                let cells: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
                writeln!(w, "{}", cells.join(",")).map_err(io_err)?;
            }
            Ok(())
        } else {
            sampler.sample(self.lineage(i)).write_csv(w).map_err(io_err)
        }
    }

    /// Replicate `i` as a stored path (no leaps).
    pub fn sample_replicate(&self, i: u64) -> Result<PathSample> {
        Ok(self.validate()?.sample(self.lineage(i)))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapSummary {
    pub resamples: usize,
    /// Standard deviation of the resampled variances.
    pub variance_error: f64,
    /// 1st percentile of the resampled variances.
    pub variance_lower_99: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Comparison {
    pub name: String,
    pub estimate: f64,
    pub reference: Option<f64>,
    pub sigma: Option<f64>,
    /// Systematic allowance (truncation) subtracted from the gap before
    /// dividing by `sigma`.
    pub allowance: f64,
    pub z: Option<f64>,
    pub verdict: Verdict,
    pub note: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Nondegeneracy {
    pub variance: f64,
    pub lower_bound_99: f64,
    pub degenerate_function: bool,
    pub verdict: Verdict,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EstimateReport {
    pub process: Process,
    pub dim: usize,
    pub start: Vec<f64>,
    pub n: usize,
    pub seed: u64,
    pub dt: f64,
    pub horizon: HorizonPolicy,
    pub mean: f64,
    pub variance: f64,
    pub std_error: f64,
    pub ci99: [f64; 2],
    /// Exact `E ∫_T^∞ f`, added to the mean; zero when not known.
    pub truncation_correction: f64,
    /// One-sided allowance for the unknown truncation and leap losses.
    pub tail_allowance: f64,
    /// Exact `Var Y − Var Y_T`, added to the variance; `None` when unknown.
    pub variance_correction: Option<f64>,
    pub skipped_fraction: f64,
    pub skip_error_bound: f64,
    pub bootstrap: BootstrapSummary,
    pub analytic: Option<AnalyticReference>,
    pub comparisons: Vec<Comparison>,
    pub nondegeneracy: Option<Nondegeneracy>,
    #[serde(skip)]
    pub samples: Vec<f64>,
    #[serde(skip)]
    pub wall_time_seconds: f64,
}

/// Runs `n` replicates in parallel; replicate `i` draws from the path stream
/// `(seed, i)`, so the report does not depend on scheduling.
pub fn run_experiment(
    exp: &Experiment,
    reference: Option<AnalyticReference>,
) -> Result<EstimateReport> {
    let started = Instant::now();
    let sampler = exp.validate()?;
    let skip = exp.skip()?;
    let results: Vec<Result<(f64, u64, f64)>> = (0..exp.n as u64)
        .into_par_iter()
        .map(|i| {
            if matches!(exp.spec.process(), Process::Bm) {
                let r = integrate_bm_streaming(
                    &exp.f,
                    exp.spec.start(),
                    sampler.steps(),
                    sampler.dt(),
                    exp.lineage(i),
                    skip.as_ref(),
                    None,
                );
                Ok((r.value, r.skipped, r.skip_error_bound))
            } else {
                Ok((
                    integrate_path(&sampler.sample(exp.lineage(i)), &exp.f)?,
                    0,
                    0.0,
                ))
            }
        })
        .collect();
    let mut samples = Vec::with_capacity(exp.n);
    let mut skipped = 0u64;
    let mut skip_error_bound = 0.0f64;
    for r in results {
        let (y, s, e) = r?;
        samples.push(y);
        skipped += s;
        skip_error_bound = skip_error_bound.max(e);
    }
    let moments: Moments = samples.iter().copied().collect();
    let std_error = moments.std_error();
    let horizon = exp.policy.resolved_t;

    let exact = exact_tail(&exp.f, &exp.spec, horizon)?;
    let (truncation_correction, tail_allowance) = match exact {
        Some(tail) => (tail, skip_error_bound),
        None => (0.0, exp.policy.tail_bound_at_t + skip_error_bound),
    };
    let variance_correction =
        if matches!(exp.spec.process(), Process::Bm) && exp.f.gaussian_components().is_some() {
            let x = exp.spec.start();
            let full = bm_gaussian_moments(&exp.f, x, None)?;
            let cut = bm_gaussian_moments(&exp.f, x, Some(horizon))?;
            full.zip(cut).map(|(a, b)| a.variance - b.variance)
        } else {
            None
        };
    let total_steps = (sampler.steps() as f64) * exp.n as f64;
    let mut report = EstimateReport {
        process: exp.spec.process().clone(),
        dim: exp.spec.dim(),
        start: exp.spec.start().to_vec(),
        n: exp.n,
        seed: exp.seed,
        dt: sampler.dt(),
        horizon: exp.policy,
        mean: moments.mean,
        variance: moments.variance(),
        std_error,
        ci99: [
            moments.mean - Z_99 * std_error,
            moments.mean + Z_99 * std_error,
        ],
        truncation_correction,
        tail_allowance,
        variance_correction,
        skipped_fraction: if skip.is_some() {
            skipped as f64 / total_steps
        } else {
            0.0
        },
        skip_error_bound,
        bootstrap: bootstrap_variance(&samples, exp.seed),
        analytic: reference,
        comparisons: Vec::new(),
        nondegeneracy: None,
        samples,
        wall_time_seconds: 0.0,
    };
    report.comparisons = compare(&report);
    if report.n >= MIN_NONDEGENERACY_N {
        report.nondegeneracy = Some(nondegeneracy_test(&report, &exp.f)?);
    }
    report.wall_time_seconds = started.elapsed().as_secs_f64();
    Ok(report)
}

/// Resampled variances on the bootstrap stream `(seed, b)`.
pub fn bootstrap_variance(samples: &[f64], seed: u64) -> BootstrapSummary {
    let n = samples.len();
    let mut vars: Vec<f64> = (0..BOOTSTRAP_RESAMPLES as u64)
        .into_par_iter()
        .map(|b| {
            let mut rng = StreamKey::new(seed, Domain::Bootstrap, b).rng();
            (0..n)
                .map(|_| samples[rng.random_range(0..n)])
                .collect::<Moments>()
                .variance()
        })
        .collect();
    let m: Moments = vars.iter().copied().collect();
    vars.sort_by(f64::total_cmp);
    BootstrapSummary {
        resamples: BOOTSTRAP_RESAMPLES,
        variance_error: m.variance().sqrt(),
        variance_lower_99: vars[BOOTSTRAP_RESAMPLES / 100],
    }
}

fn z_score(gap: f64, allowance_below: f64, allowance_above: f64, sigma: f64) -> f64 {
    let excess = if gap > allowance_above {
        gap - allowance_above
    } else if gap < -allowance_below {
        gap + allowance_below
    } else {
        0.0
    };
    if excess == 0.0 {
        0.0
    } else {
        excess / sigma
    }
}

/// z-scores of the mean and variance against the analytic reference.
///
/// Truncation only lowers `Y_T`, so the unknown tail widens the mean test on
/// the low side only. Without a reference every comparison is `n/a`.
pub fn compare(report: &EstimateReport) -> Vec<Comparison> {
    let estimate_mean = report.mean + report.truncation_correction;
    let estimate_var = report.variance + report.variance_correction.unwrap_or(0.0);
    let Some(r) = report.analytic else {
        return vec![
            not_applicable("mean", estimate_mean, "no analytic reference"),
            not_applicable("variance", estimate_var, "no analytic reference"),
        ];
    };
    let sigma = (report.std_error.powi(2) + r.mean_error.powi(2)).sqrt();
    let z = z_score(estimate_mean - r.mean, report.tail_allowance, 0.0, sigma);
    let mean = Comparison {
        name: "mean".into(),
        estimate: estimate_mean,
        reference: Some(r.mean),
        sigma: Some(sigma),
        allowance: report.tail_allowance,
        z: Some(z),
        verdict: Verdict::from_z(z),
        note: if report.truncation_correction > 0.0 {
            "exact tail added".into()
        } else {
            "tail bound allowed below".into()
        },
    };
    let variance = match (r.variance, r.variance_error) {
        (Some(v), Some(err)) => {
            let band = if report.variance_correction.is_some() {
                Some(0.0)
            } else if report.tail_allowance == 0.0 {
                Some(0.0)
            } else {
                // Var Y − Var Y_T = Var R + 2 Cov(Y_T, R) with R the tail,
                // E R² ≤ 2 sup(Gf) E R and Cauchy–Schwarz on the covariance
                r.peak_potential.map(|s| {
                    let v_r = 2.0 * s * report.tail_allowance;
                    v_r + 2.0 * (report.variance * v_r).sqrt()
                })
            };
            match band {
                Some(band) => {
                    let sigma = (report.bootstrap.variance_error.powi(2) + err * err).sqrt();
                    let z = z_score(estimate_var - v, band, band, sigma);
                    Comparison {
                        name: "variance".into(),
                        estimate: estimate_var,
                        reference: Some(v),
                        sigma: Some(sigma),
                        allowance: band,
                        z: Some(z),
                        verdict: Verdict::from_z(z),
                        note: if report.variance_correction.is_some() {
                            "exact truncation correction added".into()
                        } else {
                            "truncation band allowed".into()
                        },
                    }
                }
                None => not_applicable(
                    "variance",
                    estimate_var,
                    "truncation effect on the variance not bounded",
                ),
            }
        }
        _ => not_applicable("variance", estimate_var, "no analytic variance"),
    };
    vec![mean, variance]
}

fn not_applicable(name: &str, estimate: f64, note: &str) -> Comparison {
    Comparison {
        name: name.into(),
        estimate,
        reference: None,
        sigma: None,
        allowance: 0.0,
        z: None,
        verdict: Verdict::NotApplicable,
        note: note.into(),
    }
}

/// Bootstrap 99% lower bound on the variance: pass when it is positive for
/// `f ≢ 0`, or when the variance is exactly zero for `f ≡ 0`.
pub fn nondegeneracy_test(report: &EstimateReport, f: &TestFunction) -> Result<Nondegeneracy> {
    if report.n < MIN_NONDEGENERACY_N {
        return Err(Error::InsufficientData(format!(
            "{} replicates; the non-degeneracy test needs {MIN_NONDEGENERACY_N}",
            report.n
        )));
    }
    let degenerate_function = f.is_zero();
    let lower = report.bootstrap.variance_lower_99;
    let pass = if degenerate_function {
        report.variance == 0.0
    } else {
        lower > 0.0
    };
    Ok(Nondegeneracy {
        variance: report.variance,
        lower_bound_99: lower,
        degenerate_function,
        verdict: if pass { Verdict::Pass } else { Verdict::Fail },
    })
}

impl EstimateReport {
    pub fn verdict(&self, name: &str) -> Option<Verdict> {
        self.comparisons
            .iter()
            .find(|c| c.name == name)
            .map(|c| c.verdict)
    }

    pub fn any_failure(&self) -> bool {
        self.comparisons.iter().any(|c| c.verdict == Verdict::Fail)
            || self
                .nondegeneracy
                .is_some_and(|n| n.verdict == Verdict::Fail)
    }

    pub fn csv_header() -> &'static str {
        "process,dim,n,seed,horizon,dt,mean,variance,std_error,ci99_low,ci99_high,truncation_correction,\
         tail_allowance,analytic_mean,analytic_variance,z_mean,z_variance,verdict_mean,verdict_variance,\
         nondegeneracy"
    }

    /// One CSV row matching [`Self::csv_header`].
    pub fn csv_row(&self) -> String {
        let num = |v: f64| format!("{v:.16e}");
        let opt = |v: Option<f64>| v.map(num).unwrap_or_default();
        let cmp = |name: &str| self.comparisons.iter().find(|c| c.name == name);
        [
            process_name(&self.process).to_string(),
            self.dim.to_string(),
            self.n.to_string(),
            self.seed.to_string(),
            num(self.horizon.resolved_t),
            num(self.dt),
            num(self.mean),
            num(self.variance),
            num(self.std_error),
            num(self.ci99[0]),
            num(self.ci99[1]),
            num(self.truncation_correction),
            num(self.tail_allowance),
            opt(self.analytic.map(|a| a.mean)),
            opt(self.analytic.and_then(|a| a.variance)),
            opt(cmp("mean").and_then(|c| c.z)),
            opt(cmp("variance").and_then(|c| c.z)),
            cmp("mean")
                .map_or("n/a", |c| c.verdict.as_str())
                .to_string(),
            cmp("variance")
                .map_or("n/a", |c| c.verdict.as_str())
                .to_string(),
            self.nondegeneracy
                .map_or("n/a", |n| n.verdict.as_str())
                .to_string(),
        ]
        .join(",")
    }
}

pub fn process_name(p: &Process) -> &'static str {
    match p {
        Process::Bm => "bm",
        Process::Fbm { .. } => "fbm",
        Process::Cpp { .. } => "cpp",
    }
}

/// JSON formatter printing every float with 17 significant digits.
struct FullPrecision;

impl serde_json::ser::Formatter for FullPrecision {
    fn write_f64<W: ?Sized + Write>(&mut self, writer: &mut W, value: f64) -> io::Result<()> {
        write!(writer, "{value:.16e}")
    }

    fn write_f32<W: ?Sized + Write>(&mut self, writer: &mut W, value: f32) -> io::Result<()> {
        write!(writer, "{:.16e}", value as f64)
    }
}

/// Compact JSON with 17 significant digits for every float.
pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut out = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut out, FullPrecision);
    value
        .serialize(&mut ser)
        .map_err(|e| invalid("json", e.to_string()))?;
    Ok(String::from_utf8(out).expect("serde_json writes UTF-8"))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpp::JumpKernel;
    use crate::functional::fixed_horizon;

    fn experiment(
        spec: ProcessSpec,
        f: TestFunction,
        n: usize,
        horizon: f64,
        dt: f64,
        seed: u64,
    ) -> Experiment {
        let policy = fixed_horizon(&f, &spec, horizon).unwrap();
        Experiment {
            spec,
            f,
            n,
            policy,
            dt,
            seed,
            far_field_skip: true,
        }
    }

    fn report_with(mean: f64, se: f64, reference: f64) -> EstimateReport {
        let f = TestFunction::gaussian(3, 1.0, 1.0).unwrap();
        let spec = ProcessSpec::bm(3, &[0.0; 3]).unwrap();
        let mut r = run_experiment(&experiment(spec, f, 2, 1.0, 0.1, 1), None).unwrap();
        r.mean = mean;
        r.std_error = se;
        r.truncation_correction = 0.0;
        r.tail_allowance = 0.0;
        r.analytic = Some(AnalyticReference {
            mean: reference,
            mean_error: 0.0,
            variance: None,
            variance_error: None,
            peak_potential: None,
        });
        r
    }

    #[test]
    fn z_arithmetic() {
        let c = compare(&report_with(2.01, 0.02, 2.0));
        assert!((c[0].z.unwrap() - 0.5).abs() < 1e-9);
        assert_eq!(c[0].verdict, Verdict::Pass);
        let c = compare(&report_with(2.50, 0.02, 2.0));
        assert!((c[0].z.unwrap() - 25.0).abs() < 1e-9);
        assert_eq!(c[0].verdict, Verdict::Fail);
        assert_eq!(c[1].verdict, Verdict::NotApplicable);
        assert!(c[1].z.is_none());
    }

    #[test]
    fn tail_allowance_is_one_sided() {
        let mut r = report_with(1.95, 0.01, 2.0);
        r.tail_allowance = 0.1;
        assert_eq!(compare(&r)[0].z, Some(0.0));
        let mut r = report_with(2.1, 0.01, 2.0);
        r.tail_allowance = 0.1;
        assert!(compare(&r)[0].z.unwrap() > 9.0);
    }

    #[test]
    fn missing_reference_is_never_a_pass() {
        let f = TestFunction::gaussian(3, 1.0, 1.0).unwrap();
        let spec = ProcessSpec::fbm(3, 0.75, &[0.0; 3]).unwrap();
        let r = run_experiment(&experiment(spec, f, 4, 2.0, 0.05, 3), None).unwrap();
        assert!(r
            .comparisons
            .iter()
            .all(|c| c.verdict == Verdict::NotApplicable));
        assert!(!r.any_failure());
        assert!(r.nondegeneracy.is_none());
    }

    #[test]
    fn zero_function_is_exactly_degenerate() {
        let spec = ProcessSpec::bm(3, &[0.0; 3]).unwrap();
        let f = TestFunction::zero(3);
        let r = run_experiment(&experiment(spec, f.clone(), 200, 10.0, 0.01, 5), None).unwrap();
        assert_eq!(r.mean, 0.0);
        assert_eq!(r.variance, 0.0);
        let n = r.nondegeneracy.unwrap();
        assert_eq!(n.verdict, Verdict::Pass);
        assert!(n.degenerate_function);
        assert!(nondegeneracy_test(&report_with(1.0, 0.1, 1.0), &f).is_err());
    }

    #[test]
    fn reproducible_and_seed_sensitive() {
        let spec = ProcessSpec::bm(3, &[0.0; 3]).unwrap();
        let f = TestFunction::gaussian(3, 1.0, 1.0).unwrap();
        let e = experiment(spec, f, 300, 20.0, 0.02, 11);
        let a = run_experiment(&e, None).unwrap();
        let b = run_experiment(&e, None).unwrap();
        assert_eq!(to_json(&a).unwrap(), to_json(&b).unwrap());
        assert_eq!(a.samples, b.samples);
        let c = run_experiment(&Experiment { seed: 12, ..e }, None).unwrap();
        assert_ne!(a.mean, c.mean);
    }

    #[test]
    fn positive_function_is_nondegenerate() {
        let k = JumpKernel::gaussian(3, 1.0).unwrap();
        let spec = ProcessSpec::cpp(1.0, k, &[0.0; 3]).unwrap();
        let f = TestFunction::gaussian_density(3, 1.0).unwrap();
        let r = run_experiment(&experiment(spec, f, 500, 50.0, 0.01, 2), None).unwrap();
        let n = r.nondegeneracy.unwrap();
        assert_eq!(n.verdict, Verdict::Pass);
        assert!(n.lower_bound_99 > 0.0 && n.lower_bound_99 < r.variance);
    }

    #[test]
    fn std_error_scales_with_root_n() {
        let spec = ProcessSpec::bm(3, &[0.0; 3]).unwrap();
        let f = TestFunction::gaussian(3, 1.0, 1.0).unwrap();
        let mut ratios = Vec::new();
        for seed in 0..4 {
            let small = run_experiment(
                &experiment(spec.clone(), f.clone(), 500, 10.0, 0.05, seed),
                None,
            )
            .unwrap();
            let large = run_experiment(
                &experiment(spec.clone(), f.clone(), 2000, 10.0, 0.05, 100 + seed),
                None,
            )
            .unwrap();
            ratios.push(small.std_error / large.std_error);
        }
        let mean_ratio = ratios.iter().sum::<f64>() / ratios.len() as f64;
        assert!((mean_ratio - 2.0).abs() < 0.4, "{ratios:?}");
    }

    #[test]
    fn bm_and_half_hurst_fbm_agree() {
        let f = TestFunction::gaussian(3, 1.0, 1.0).unwrap();
        let bm = run_experiment(
            &experiment(
                ProcessSpec::bm(3, &[0.5; 3]).unwrap(),
                f.clone(),
                2000,
                20.0,
                0.02,
                9,
            ),
            None,
        )
        .unwrap();
        let fbm = run_experiment(
            &experiment(
                ProcessSpec::fbm(3, 0.5, &[0.5; 3]).unwrap(),
                f,
                2000,
                20.0,
                0.02,
                9,
            ),
            None,
        )
        .unwrap();
        let se = (bm.std_error.powi(2) + fbm.std_error.powi(2)).sqrt();
        assert!(
            (bm.mean - fbm.mean).abs() < 3.0 * se,
            "{} vs {}",
            bm.mean,
            fbm.mean
        );
    }

    #[test]
    fn resource_cap_reports_partial_n() {
        let spec = ProcessSpec::bm(3, &[0.0; 3]).unwrap();
        let f = TestFunction::gaussian(3, 1.0, 1.0).unwrap();
        let err = run_experiment(&experiment(spec, f, 1 << 40, 1e4, 0.01, 1), None).unwrap_err();
        assert!(
            matches!(err, Error::ResourceCap(ref m) if m.contains("at most")),
            "{err}"
        );
    }

    #[test]
    fn json_has_seventeen_digits() {
        let s = to_json(&vec![0.1f64, 2.0]).unwrap();
        assert_eq!(s, "[1.0000000000000001e-1,2.0000000000000000e0]");
        let back: Vec<f64> = serde_json::from_str(&s).unwrap();
        assert_eq!(back, vec![0.1, 2.0]);
    }

    #[test]
    fn csv_row_matches_header() {
        let r = report_with(2.0, 0.1, 2.0);
        let cols = EstimateReport::csv_header().split(',').count();
        assert_eq!(r.csv_row().split(',').count(), cols);
    }
}
