//! TOML experiment configuration. Unknown keys are rejected everywhere.

use std::path::{Path, PathBuf};

use perpetual_core::cpp::{JumpKernel, KernelFamily};
use perpetual_core::funcs::{Profile, Term, TestFunction};
use perpetual_core::functional::{adaptive_horizon, fixed_horizon, HorizonPolicy};
use perpetual_core::lattice::LatticeSpec;
use perpetual_core::mc::AnalyticOptions;
use perpetual_core::paths::{Process, ProcessSpec};
use serde::{Deserialize, Serialize};

use crate::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub seed: Option<u64>,
    #[serde(default, skip_serializing)]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing)]
    pub out: Option<PathBuf>,
    pub process: Option<ProcessConfig>,
    /// Components of `f`; an empty list is `f ≡ 0`.
    pub function: Option<Vec<TermConfig>>,
    /// Starting point.
    pub x: Option<Vec<f64>>,
    pub n: Option<usize>,
    pub dt: Option<f64>,
    pub horizon: Option<HorizonConfig>,
    #[serde(default = "yes")]
    pub far_field_skip: bool,
    pub lattice: Option<LatticeConfig>,
    #[serde(default)]
    pub analytic: AnalyticOptions,
    #[serde(default)]
    pub green0: Green0Config,
    #[serde(default)]
    pub debug: DebugConfig,
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum ProcessConfig {
    Bm {
        dim: usize,
    },
    Fbm {
        dim: usize,
        hurst: f64,
    },
    Cpp {
        dim: usize,
        #[serde(default = "unit")]
        rate: f64,
        kernel: KernelConfig,
    },
}

fn unit() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelConfig {
    Gaussian {
        variance: f64,
        #[serde(default)]
        shift: Option<Vec<f64>>,
    },
    ExponentialTail {
        scale: f64,
        #[serde(default)]
        shift: Option<Vec<f64>>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "profile", rename_all = "snake_case", deny_unknown_fields)]
pub enum TermConfig {
    Gaussian {
        amplitude: f64,
        width: f64,
        #[serde(default)]
        center: Option<Vec<f64>>,
        #[serde(default = "unit")]
        weight: f64,
    },
    Bump {
        radius: f64,
        amplitude: f64,
        #[serde(default)]
        center: Option<Vec<f64>>,
        #[serde(default = "unit")]
        weight: f64,
    },
    GaussianDensity {
        variance: f64,
        #[serde(default)]
        center: Option<Vec<f64>>,
        #[serde(default = "unit")]
        weight: f64,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum HorizonConfig {
    Fixed { horizon: f64 },
    Adaptive { eps: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LatticeConfig {
    pub extent: f64,
    pub points: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct Green0Config {
    /// Terms of the convolution series used as the oracle.
    pub series_terms: usize,
    /// Radius of the ball on which field and series are compared.
    pub compare_radius: f64,
    /// Radial window of the log-linear tail fit.
    pub fit_range: [f64; 2],
    pub tolerance: f64,
}

impl Default for Green0Config {
    fn default() -> Self {
        Self {
            series_terms: 4000,
            compare_radius: 4.0,
            fit_range: [2.0, 6.0],
            tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DebugConfig {
    /// Multiplies the analytic references before comparison (fault injection).
    pub analytic_scale: f64,
    /// Replicates written by `--dump-paths`.
    pub dump_count: usize,
}

impl Default for DebugConfig {
    fn default() -> Self {
        Self {
            analytic_scale: 1.0,
            dump_count: 3,
        }
    }
}

fn missing(key: &str) -> CliError {
    CliError::Config(format!("missing key `{key}`"))
}

fn bad(key: &str, reason: impl std::fmt::Display) -> CliError {
    CliError::Config(format!("invalid `{key}`: {reason}"))
}

impl Config {
    pub fn load(path: &Path) -> Result<Self, CliError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    fn process_config(&self) -> Result<&ProcessConfig, CliError> {
        self.process.as_ref().ok_or_else(|| missing("process"))
    }

    pub fn dim(&self) -> Result<usize, CliError> {
        Ok(match self.process_config()? {
            ProcessConfig::Bm { dim }
            | ProcessConfig::Fbm { dim, .. }
            | ProcessConfig::Cpp { dim, .. } => *dim,
        })
    }

    pub fn kernel(&self) -> Result<JumpKernel, CliError> {
        match self.process_config()? {
            ProcessConfig::Cpp { dim, kernel, .. } => build_kernel(*dim, kernel),
            _ => Err(bad(
                "process.family",
                "this command needs a cpp process with a kernel",
            )),
        }
    }

    pub fn process_spec(&self) -> Result<ProcessSpec, CliError> {
        let dim = self.dim()?;
        let x = self.x.as_ref().ok_or_else(|| missing("x"))?;
        let process = match self.process_config()? {
            ProcessConfig::Bm { .. } => Process::Bm,
            ProcessConfig::Fbm { hurst, .. } => Process::Fbm { hurst: *hurst },
            ProcessConfig::Cpp { rate, kernel, .. } => Process::Cpp {
                rate: *rate,
                kernel: build_kernel(dim, kernel)?,
            },
        };
        ProcessSpec::new(dim, process, x).map_err(CliError::Core)
    }

    pub fn test_function(&self) -> Result<TestFunction, CliError> {
        let dim = self.dim()?;
        let terms = self.function.as_ref().ok_or_else(|| missing("function"))?;
        let terms = terms
            .iter()
            .map(|t| {
                let (profile, center, weight) = match t {
                    TermConfig::Gaussian {
                        amplitude,
                        width,
                        center,
                        weight,
                    } => (
                        Profile::Gaussian {
                            amplitude: *amplitude,
                            width: *width,
                        },
                        center,
                        *weight,
                    ),
                    TermConfig::Bump {
                        radius,
                        amplitude,
                        center,
                        weight,
                    } => (
                        Profile::Bump {
                            radius: *radius,
                            amplitude: *amplitude,
                        },
                        center,
                        *weight,
                    ),
                    TermConfig::GaussianDensity {
                        variance,
                        center,
                        weight,
                    } => (
                        Profile::GaussianDensity {
                            variance: *variance,
                        },
                        center,
                        *weight,
                    ),
                };
                Term {
                    weight,
                    center: center.clone().unwrap_or_else(|| vec![0.0; dim]),
                    profile,
                }
            })
            .collect();
        TestFunction::from_terms(dim, terms).map_err(CliError::Core)
    }

    pub fn n(&self) -> Result<usize, CliError> {
        self.n.ok_or_else(|| missing("n"))
    }

    /// Grid step; compound Poisson paths need none.
    pub fn dt(&self) -> Result<f64, CliError> {
        match (self.process_config()?, self.dt) {
            (_, Some(dt)) => Ok(dt),
            (ProcessConfig::Cpp { .. }, None) => Ok(1.0),
            _ => Err(missing("dt")),
        }
    }

    pub fn horizon_policy(
        &self,
        f: &TestFunction,
        spec: &ProcessSpec,
    ) -> Result<HorizonPolicy, CliError> {
        let h = self.horizon.ok_or_else(|| missing("horizon"))?;
        match h {
            HorizonConfig::Fixed { horizon } => fixed_horizon(f, spec, horizon),
            HorizonConfig::Adaptive { eps } => adaptive_horizon(f, spec, eps),
        }
        .map_err(CliError::Core)
    }

    pub fn lattice(&self) -> Result<LatticeSpec, CliError> {
        let dim = self.dim()?;
        let l = self.lattice.unwrap_or(LatticeConfig {
            extent: self.analytic.lattice_extent,
            points: self.analytic.lattice_points,
        });
        LatticeSpec::new(dim, l.extent, l.points).map_err(CliError::Core)
    }

    /// Analytic options with the lattice section, when given, taking precedence.
    pub fn analytic_options(&self) -> AnalyticOptions {
        let mut o = self.analytic;
        if let Some(l) = self.lattice {
            o.lattice_extent = l.extent;
            o.lattice_points = l.points;
        }
        o
    }
}

fn build_kernel(dim: usize, k: &KernelConfig) -> Result<JumpKernel, CliError> {
    let (family, shift) = match k {
        KernelConfig::Gaussian { variance, shift } => (
            KernelFamily::Gaussian {
                variance: *variance,
            },
            shift,
        ),
        KernelConfig::ExponentialTail { scale, shift } => {
            (KernelFamily::ExponentialTail { scale: *scale }, shift)
        }
    };
    let kernel = JumpKernel::new(dim, family).map_err(CliError::Core)?;
    match shift {
        Some(s) => kernel.shifted(s).map_err(CliError::Core),
        None => Ok(kernel),
    }
}
