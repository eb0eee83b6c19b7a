use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use perpetual_core::cpp::{
    fit_exponential_tail, g0_series, g0_series_field, g0_series_radial, g0_spectral,
    validate_kernel, GreenSummary, KernelFamily, KernelValidation, TailFit,
};
use perpetual_core::kernels::{bm_kernel_constant, fbm_kernel_constant, PotentialConstant};
use perpetual_core::lattice::LatticeSpec;
use perpetual_core::mc::{
    analytic_reference, process_name, run_experiment, to_json, AnalyticReference, Comparison,
    EstimateReport, Experiment, Verdict,
};
use perpetual_core::paths::{Process, ProcessSpec};
use rayon::prelude::*;
use serde::Serialize;

use crate::config::Config;
use crate::CliError;

pub struct Context {
    pub config: Config,
    pub out: PathBuf,
    pub dump_paths: bool,
}

impl Context {
    fn seed(&self) -> u64 {
        self.config.seed()
    }

    fn create(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        Ok(BufWriter::new(File::create(self.out.join(name))?))
    }

    /// `{"command", "seed", "config", "result"}` as one JSON document.
    fn write_json<T: Serialize>(
        &self,
        name: &str,
        command: &str,
        result: &T,
    ) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Envelope<'a, T> {
            command: &'a str,
            seed: u64,
            config: &'a Config,
            result: &'a T,
        }
        let text = to_json(&Envelope {
            command,
            seed: self.seed(),
            config: &self.config,
            result,
        })?;
        let mut w = self.create(name)?;
        writeln!(w, "{text}")?;
        w.flush()?;
        Ok(())
    }

    /// Opens a CSV file and writes the `# seed` and `# config` lines.
    fn csv(&self, name: &str) -> Result<BufWriter<File>, CliError> {
        let mut w = self.create(name)?;
        writeln!(w, "# seed = {}", self.seed())?;
        writeln!(w, "# config = {}", to_json(&self.config)?)?;
        Ok(w)
    }

    fn write_timing(&self, command: &str, seconds: f64) -> Result<(), CliError> {
        #[derive(Serialize)]
        struct Timing<'a> {
            command: &'a str,
            wall_time_seconds: f64,
        }
        let mut w = self.create("timing.json")?;
        writeln!(
            w,
            "{}",
            to_json(&Timing {
                command,
                wall_time_seconds: seconds
            })?
        )?;
        Ok(())
    }
}

fn constant_for(spec: &ProcessSpec) -> Result<Option<PotentialConstant>, CliError> {
    Ok(match spec.process() {
        Process::Bm => Some(bm_kernel_constant(spec.dim())?),
        Process::Fbm { hurst } => Some(fbm_kernel_constant(spec.dim(), *hurst)?),
        Process::Cpp { .. } => None,
    })
}

#[derive(Serialize)]
struct AnalyticResult {
    process: &'static str,
    constant: Option<PotentialConstant>,
    reference: Option<AnalyticReference>,
}

fn analytic_result(ctx: &Context) -> Result<AnalyticResult, CliError> {
    let spec = ctx.config.process_spec()?;
    let f = ctx.config.test_function()?;
    Ok(AnalyticResult {
        process: process_name(spec.process()),
        constant: constant_for(&spec)?,
        reference: analytic_reference(&spec, &f, &ctx.config.analytic_options())?,
    })
}

pub fn analytic(ctx: &Context) -> Result<(), CliError> {
    let result = analytic_result(ctx)?;
    ctx.write_json("analytic.json", "analytic", &result)?;
    if let Some(r) = result.reference {
        println!("mean {:.10} ± {:.2e}", r.mean, r.mean_error);
        match (r.variance, r.variance_error) {
            (Some(v), Some(e)) => println!("variance {v:.10} ± {e:.2e}"),
            _ => println!("variance n/a"),
        }
    }
    Ok(())
}

fn experiment(ctx: &Context) -> Result<Experiment, CliError> {
    let c = &ctx.config;
    let spec = c.process_spec()?;
    let f = c.test_function()?;
    let policy = c.horizon_policy(&f, &spec)?;
    Ok(Experiment {
        n: c.n()?,
        dt: c.dt()?,
        spec,
        f,
        policy,
        seed: ctx.seed(),
        far_field_skip: c.far_field_skip,
    })
}

fn dump_paths(ctx: &Context, exp: &Experiment) -> Result<(), CliError> {
    if !ctx.dump_paths {
        return Ok(());
    }
    let dir = Path::new("paths");
    std::fs::create_dir_all(ctx.out.join(dir))?;
    for i in 0..ctx.config.debug.dump_count.min(exp.n) as u64 {
        let name = dir.join(format!("replicate_{i}.csv"));
        let mut w = ctx.csv(name.to_str().expect("ASCII path"))?;
        exp.write_replicate(i, &mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn print_report(report: &EstimateReport) {
    println!(
        "n = {}, T = {:.6e}, mean {:.10} (SE {:.3e}), variance {:.10}",
        report.n, report.horizon.resolved_t, report.mean, report.std_error, report.variance
    );
    for c in &report.comparisons {
        match (c.reference, c.z) {
            (Some(r), Some(z)) => println!(
                "{}: estimate {:.10} vs {:.10}, z = {:.3}: {}",
                c.name,
                c.estimate,
                r,
                z,
                c.verdict.as_str()
            ),
            _ => println!("{}: n/a ({})", c.name, c.note),
        }
    }
    if let Some(n) = report.nondegeneracy {
        println!(
            "nondegeneracy: 99% lower bound {:.6e}: {}",
            n.lower_bound_99,
            n.verdict.as_str()
        );
    }
}

pub fn simulate(ctx: &Context) -> Result<(), CliError> {
    let exp = experiment(ctx)?;
    let report = run_experiment(&exp, None)?;
    ctx.write_json("simulate.json", "simulate", &report)?;
    let mut w = ctx.csv("simulate.csv")?;
    writeln!(w, "{}", EstimateReport::csv_header())?;
    writeln!(w, "{}", report.csv_row())?;
    w.flush()?;
    ctx.write_timing("simulate", report.wall_time_seconds)?;
    dump_paths(ctx, &exp)?;
    print_report(&report);
    Ok(())
}

#[derive(Serialize)]
struct CompareResult<'a> {
    analytic: &'a AnalyticResult,
    analytic_scale: f64,
    report: &'a EstimateReport,
}

fn comparison_row(c: &Comparison) -> String {
    let num = |v: Option<f64>| v.map(|x| format!("{x:.16e}")).unwrap_or_default();
    format!(
        "{},{:.16e},{},{},{:.16e},{},{}",
        c.name,
        c.estimate,
        num(c.reference),
        num(c.sigma),
        c.allowance,
        num(c.z),
        c.verdict.as_str()
    )
}

pub fn compare(ctx: &Context) -> Result<(), CliError> {
    let exp = experiment(ctx)?;
    let analytic = analytic_result(ctx)?;
    let scale = ctx.config.debug.analytic_scale;
    let reference = analytic.reference.map(|r| AnalyticReference {
        mean: r.mean * scale,
        variance: r.variance.map(|v| v * scale),
        ..r
    });
    let report = run_experiment(&exp, reference)?;
    ctx.write_json(
        "compare.json",
        "compare",
        &CompareResult {
            analytic: &analytic,
            analytic_scale: scale,
            report: &report,
        },
    )?;
    let mut w = ctx.csv("compare.csv")?;
    writeln!(w, "comparison,estimate,reference,sigma,allowance,z,verdict")?;
    for c in &report.comparisons {
        writeln!(w, "{}", comparison_row(c))?;
    }
    if let Some(n) = report.nondegeneracy {
        writeln!(
            w,
            "nondegeneracy,{:.16e},0.0000000000000000e0,,,,{}",
            n.lower_bound_99,
            n.verdict.as_str()
        )?;
    }
    w.flush()?;
    let mut w = ctx.csv("simulate.csv")?;
    writeln!(w, "{}", EstimateReport::csv_header())?;
    writeln!(w, "{}", report.csv_row())?;
    w.flush()?;
    ctx.write_timing("compare", report.wall_time_seconds)?;
    dump_paths(ctx, &exp)?;
    print_report(&report);
    if report.any_failure() {
        let failed: Vec<&str> = report
            .comparisons
            .iter()
            .filter(|c| c.verdict == Verdict::Fail)
            .map(|c| c.name.as_str())
            .chain(
                report
                    .nondegeneracy
                    .filter(|n| n.verdict == Verdict::Fail)
                    .map(|_| "nondegeneracy"),
            )
            .collect();
        return Err(CliError::Failed(format!(
            "failed comparisons: {}",
            failed.join(", ")
        )));
    }
    Ok(())
}

/// Squared index distance of a node from the origin.
fn shell(lattice: &LatticeSpec, i: usize) -> u64 {
    let mut ix = vec![0; lattice.dim];
    lattice.unflatten(i, &mut ix);
    let half = (lattice.points / 2) as i64;
    ix.iter().map(|&j| (j as i64 - half).pow(2) as u64).sum()
}

#[derive(Serialize)]
struct SeriesOracle {
    method: &'static str,
    series_terms: usize,
    radius: f64,
    nodes: usize,
    sup_difference: f64,
    tolerance: f64,
    within_tolerance: bool,
}

#[derive(Serialize)]
struct Green0Result {
    validation: KernelValidation,
    summary: Option<GreenSummary>,
    oracle: Option<SeriesOracle>,
    tail_fit: Option<TailFit>,
}

pub fn green0(ctx: &Context) -> Result<(), CliError> {
    let a = ctx.config.kernel()?;
    let lattice = ctx.config.lattice()?;
    let g = ctx.config.green0;
    let validation = validate_kernel(&a);
    if let Some(failure) = validation.first_failure() {
        let message = format!(
            "kernel validation failed: {}: {}",
            failure.name, failure.detail
        );
        ctx.write_json(
            "green0.json",
            "green0",
            &Green0Result {
                validation: validation.clone(),
                summary: None,
                oracle: None,
                tail_fit: None,
            },
        )?;
        return Err(CliError::Core(perpetual_core::Error::KernelValidation(
            message,
        )));
    }
    let field = g0_spectral(&a, &lattice)?;
    let nodes = field.nodes_within(g.compare_radius);
    let (method, sup_difference) = match a.family() {
        KernelFamily::Gaussian { .. } => {
            let diffs: Vec<f64> = nodes
                .par_iter()
                .map(|&i| {
                    g0_series(&a, &lattice.node(i), g.series_terms)
                        .map(|s| (s.value() - field.values()[i]).abs())
                })
                .collect::<Result<_, _>>()?;
            ("pointwise_series", diffs.into_iter().fold(0.0, f64::max))
        }
        KernelFamily::ExponentialTail { .. } if a.dim() == 3 => {
            // the oracle depends on |x| only: one evaluation per lattice shell
            let mut shells: Vec<u64> = nodes.iter().map(|&i| shell(&lattice, i)).collect();
            shells.sort_unstable();
            shells.dedup();
            let h = lattice.spacing();
            let values: Vec<f64> = shells
                .par_iter()
                .map(|&s2| {
                    g0_series_radial(&a, (s2 as f64).sqrt() * h, g.series_terms).map(|s| s.value())
                })
                .collect::<Result<_, _>>()?;
            let sup = nodes
                .iter()
                .map(|&i| {
                    let j = shells
                        .binary_search(&shell(&lattice, i))
                        .expect("shell listed");
                    (values[j] - field.values()[i]).abs()
                })
                .fold(0.0, f64::max);
            ("radial_series", sup)
        }
        KernelFamily::ExponentialTail { .. } => {
            // lattice convolution; periodization limits this to small K
            let terms = g.series_terms.min(8);
            let series = g0_series_field(&a, &lattice, terms)?;
            let sup = nodes
                .iter()
                .map(|&i| (series.values()[i] - field.values()[i]).abs())
                .fold(0.0, f64::max);
            ("lattice_partial_sum", sup)
        }
    };
    let tail_fit = match a.family() {
        KernelFamily::ExponentialTail { .. } => Some(fit_exponential_tail(
            &field,
            g.fit_range[0],
            g.fit_range[1],
        )?),
        KernelFamily::Gaussian { .. } => None,
    };
    let mut w = ctx.csv("green0_field.csv")?;
    field.write_csv(&mut w)?;
    w.flush()?;
    let result = Green0Result {
        validation,
        summary: Some(field.summary()),
        oracle: Some(SeriesOracle {
            method,
            series_terms: g.series_terms,
            radius: g.compare_radius,
            nodes: nodes.len(),
            sup_difference,
            tolerance: g.tolerance,
            within_tolerance: sup_difference <= g.tolerance,
        }),
        tail_fit,
    };
    ctx.write_json("green0.json", "green0", &result)?;
    println!(
        "G0(0) = {:.10} (error estimate {:.2e}); sup |spectral - series| on |x| <= {} = {:.3e}",
        field.origin_value(),
        field.error_estimate(),
        g.compare_radius,
        sup_difference
    );
    if let Some(fit) = tail_fit {
        println!(
            "tail fit on [{}, {}]: A = {:.6e}, B = {:.6e}, R^2 = {:.6}",
            g.fit_range[0], g.fit_range[1], fit.amplitude, fit.rate, fit.r_squared
        );
    }
    Ok(())
}
