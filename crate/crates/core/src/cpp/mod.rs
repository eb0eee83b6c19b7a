//! Compound Poisson processes: jump kernels, the potential
//! `G₀ = Σ_{k≥1} a^{*k}` and the moments of the perpetual functional.

mod green;
mod kernel;
mod moments;

pub use green::{
    fit_exponential_tail, g0_series, g0_series_field, g0_series_radial, g0_spectral,
    g0_spectral_with, partial_sum_field, GreenField, GreenMethod, GreenSummary, SeriesValue,
    SpectralOptions, TailFit,
};
pub use kernel::{validate_kernel, Check, JumpKernel, KernelFamily, KernelValidation};
pub use moments::{cpp_expectation, cpp_variance, CppExpectation, CppVariance};
