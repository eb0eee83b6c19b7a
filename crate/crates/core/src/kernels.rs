//! Potentials and variances of perpetual functionals of Brownian motion and
//! fractional Brownian motion in `R^d`.
//!
//! Both processes have Gaussian marginals, so `E ∫_0^∞ f(x + X(t)) dt`
//! reduces to `c · ∫ f(x+y) |y|^{-α} dy` where the constant `c` and the
//! exponent `α` come from integrating the marginal density over time.

use std::f64::consts::PI;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::funcs::{sample_singular_ball, Envelope, McBudget, TestFunction};
use crate::quad::{self, Tolerance};
use crate::rng::Domain;
use crate::special::{gamma, sphere_area};
use crate::stats::{parallel_moments, Moments};

/// Constant `c` in `∫_0^∞ p_t(y) dt = c |y|^{-α}` for the marginal density
/// `p_t` of a `d`-dimensional fBm with Hurst index `H` (Bm is `H = 1/2`).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialConstant {
    pub dim: usize,
    pub hurst: f64,
    pub value: f64,
}

impl PotentialConstant {
    /// Exponent `α = d - 1/H` of the singular kernel.
    pub fn exponent(&self) -> f64 {
        self.dim as f64 - 1.0 / self.hurst
    }
}

/// A computed quantity with its error bar.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Estimate {
    pub value: f64,
    pub error: f64,
}

/// Analytic mean and (where a formula exists) variance of a perpetual
/// functional.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AnalyticMoments {
    pub mean: f64,
    pub mean_error: f64,
    pub variance: Option<f64>,
    pub variance_error: Option<f64>,
}

/// Variance from the double-integral formula, with the pieces it was built from.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceEstimate {
    pub value: f64,
    pub error: f64,
    /// `∫ f(x+y) |y|^{2-d} dy`.
    pub single: Estimate,
    /// `∫∫ f(x+y) f(x+y+z) |y|^{2-d} |z|^{2-d} dy dz`.
    pub double: Estimate,
    pub samples: usize,
    /// Set when the sample budget ran out before the target relative error.
    pub flagged: bool,
}

fn check_dim_at_least_3(d: usize) -> Result<()> {
    if d < 3 {
        Err(Error::Divergent(format!(
            "Brownian motion is recurrent in d = {d} < 3"
        )))
    } else {
        Ok(())
    }
}

fn check_hurst(d: usize, h: f64) -> Result<()> {
    if !(h > 0.0 && h < 1.0) {
        return Err(invalid("hurst", format!("{h} is outside (0, 1)")));
    }
    if (d as f64) * h <= 1.0 {
        return Err(Error::Divergent(format!("d = {d} <= 1/H = {}", 1.0 / h)));
    }
    Ok(())
}

/// `K_d = 2^{d/2-1} Γ(d/2 - 1) / (2π)^{d/2}`.
pub fn bm_kernel_constant(d: usize) -> Result<PotentialConstant> {
    check_dim_at_least_3(d)?;
    let h = d as f64 / 2.0;
    Ok(PotentialConstant {
        dim: d,
        hurst: 0.5,
        value: 2f64.powf(h - 1.0) * gamma(h - 1.0) / (2.0 * PI).powf(h),
    })
}

/// `C_{d,H} = 2^{-(1 + 1/(2H))} H^{-1} π^{-d/2} Γ(d/2 - 1/(2H))`, defined for `d > 1/H`.
pub fn fbm_kernel_constant(d: usize, hurst: f64) -> Result<PotentialConstant> {
    check_hurst(d, hurst)?;
    let inv = 1.0 / (2.0 * hurst);
    Ok(PotentialConstant {
        dim: d,
        hurst,
        value: 2f64.powf(-(1.0 + inv)) / hurst
            * PI.powf(-(d as f64) / 2.0)
            * gamma(d as f64 / 2.0 - inv),
    })
}

/// Numerical value of `∫_0^∞ (2π t^{2H})^{-d/2} exp(-r² / (2 t^{2H})) dt`.
///
/// Integrated in `τ = ln t`, where the integrand is smooth and decays
/// doubly exponentially to the left and like `e^{(1-dH)τ}` to the right; the
/// right tail past the cut is summed from the exponential series.
pub fn time_kernel_quadrature(r: f64, d: usize, hurst: f64) -> Result<f64> {
    if !(r > 0.0 && r.is_finite()) {
        return Err(invalid("r", format!("{r} must be positive")));
    }
    check_hurst(d, hurst)?;
    let dh = d as f64 * hurst;
    let half_r2 = 0.5 * r * r;
    let lead = (2.0 * PI).powf(-(d as f64) / 2.0);
    let integrand =
        |tau: f64| lead * ((1.0 - dh) * tau - half_r2 * (-2.0 * hurst * tau).exp()).exp();

    let center = r.ln() / hurst;
    let lo = center - (1400f64).ln() / (2.0 * hurst) - 1.0;
    let hi = center + (50f64 * 64.0).ln() / (2.0 * hurst);
    let body = quad::integrate(integrand, lo, hi, Tolerance::rel(1e-14))?;

    // ∫_hi^∞ e^{(1-dH)τ} Σ_n (-z e^{-2H(τ-hi)})^n / n! dτ, z = r² e^{-2H hi} / 2
    let z = half_r2 * (-2.0 * hurst * hi).exp();
    let mut tail = 0.0;
    let mut term = 1.0;
    for n in 0..60 {
        if n > 0 {
            term *= -z / n as f64;
        }
        tail += term / (dh - 1.0 + 2.0 * hurst * n as f64);
        if term.abs() < 1e-18 {
            break;
        }
    }
    tail *= lead * ((1.0 - dh) * hi).exp();
    Ok(body.value + tail)
}

/// `E ∫_0^∞ f(x + B(t)) dt = K_d ∫ f(x+y) |y|^{2-d} dy`.
pub fn bm_expectation(f: &TestFunction, x: &[f64], d: usize, budget: McBudget) -> Result<Estimate> {
    check_dim(d, f.dim())?;
    let k = bm_kernel_constant(d)?;
    let j = f.radial_potential_integral(x, d as f64 - 2.0, budget)?;
    Ok(Estimate {
        value: k.value * j.value,
        error: k.value * j.error,
    })
}

/// `E ∫_0^∞ f(x + B^H(t)) dt = C_{d,H} ∫ f(x+y) |y|^{1/H-d} dy`.
pub fn fbm_expectation(
    f: &TestFunction,
    x: &[f64],
    d: usize,
    hurst: f64,
    budget: McBudget,
) -> Result<Estimate> {
    check_dim(d, f.dim())?;
    let c = fbm_kernel_constant(d, hurst)?;
    let j = f.radial_potential_integral(x, c.exponent(), budget)?;
    Ok(Estimate {
        value: c.value * j.value,
        error: c.value * j.error,
    })
}

/// Options for the Monte Carlo evaluation of the double integral.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VarianceBudget {
    /// Maximum number of samples.
    pub max_samples: usize,
    /// Stop early once the relative standard error of the double integral
    /// drops below this.
    pub target_rel_error: f64,
    pub seed: u64,
}

impl Default for VarianceBudget {
    fn default() -> Self {
        Self {
            max_samples: 1 << 22,
            target_rel_error: 1e-3,
            seed: 0x5eed,
        }
    }
}

/// Probability of proposing from the singular ball component.
const BALL_SHARE: f64 = 0.5;

/// `Var ∫_0^∞ f(x + B(t)) dt = K_d² (2 J₂ - J₁²)`.
///
/// `J₂` is estimated by importance sampling `(y, z)` from a defensive mixture
/// of `|·|^{2-d}` on the unit ball and the envelope of `f` (shifted to the
/// current point), which keeps the weights bounded. Rounds double the sample
/// count until the target relative error or the budget is reached; an
/// exhausted budget sets `flagged` and doubles the reported error bar.
pub fn bm_variance(
    f: &TestFunction,
    x: &[f64],
    d: usize,
    budget: VarianceBudget,
) -> Result<VarianceEstimate> {
    check_dim(d, f.dim())?;
    check_dim(d, x.len())?;
    let k = bm_kernel_constant(d)?.value;
    if f.is_zero() {
        let zero = Estimate {
            value: 0.0,
            error: 0.0,
        };
        return Ok(VarianceEstimate {
            value: 0.0,
            error: 0.0,
            single: zero,
            double: zero,
            samples: 0,
            flagged: false,
        });
    }
    let alpha = d as f64 - 2.0;
    let single = f.radial_potential_integral(
        x,
        alpha,
        McBudget {
            samples: budget.max_samples.max(2),
            seed: budget.seed,
        },
    )?;

    let envelope = Envelope::new(f)?;
    let ball_mass = sphere_area(d) / (d as f64 - alpha);
    let proposal = |rng: &mut rand_chacha::ChaCha8Rng, base: &[f64], out: &mut [f64]| {
        if rng.random::<f64>() < BALL_SHARE {
            sample_singular_ball(rng, d, alpha, out);
        } else {
            envelope.sample(rng, out);
            out.iter_mut().zip(base).for_each(|(o, b)| *o -= b);
        }
    };
    let density = |y: &[f64], base: &[f64], scratch: &mut [f64]| {
        let r2: f64 = y.iter().map(|v| v * v).sum();
        let ball = if r2 <= 1.0 {
            r2.powf(-alpha / 2.0) / ball_mass
        } else {
            0.0
        };
        scratch
            .iter_mut()
            .zip(y.iter().zip(base))
            .for_each(|(s, (a, b))| *s = a + b);
        BALL_SHARE * ball + (1.0 - BALL_SHARE) * envelope.density(scratch)
    };

    let sample = |rng: &mut rand_chacha::ChaCha8Rng| {
        let mut y = vec![0.0; d];
        let mut z = vec![0.0; d];
        let mut p = vec![0.0; d];
        let mut scratch = vec![0.0; d];
        proposal(rng, x, &mut y);
        let qy = density(&y, x, &mut scratch);
        p.iter_mut()
            .zip(x.iter().zip(&y))
            .for_each(|(o, (a, b))| *o = a + b);
        let fy = f.value(&p);
        if fy == 0.0 {
            return 0.0;
        }
        proposal(rng, &p, &mut z);
        let qz = density(&z, &p, &mut scratch);
        p.iter_mut().zip(&z).for_each(|(o, b)| *o += b);
        let fz = f.value(&p);
        let ry: f64 = y.iter().map(|v| v * v).sum();
        let rz: f64 = z.iter().map(|v| v * v).sum();
        fy * fz * (ry * rz).powf(-alpha / 2.0) / (qy * qz)
    };

    let mut moments = Moments::default();
    let mut round = 0u64;
    let mut batch = (1usize << 18).min(budget.max_samples.max(2));
    loop {
        let part = parallel_moments(
            batch,
            budget.seed,
            Domain::Quadrature,
            (2 << 40) + (round << 24),
            sample,
        );
        moments.merge(&part);
        round += 1;
        let used = moments.n as usize;
        let rel = moments.std_error() / moments.mean.abs();
        if rel <= budget.target_rel_error || used >= budget.max_samples {
            break;
        }
        batch = used.min(budget.max_samples - used);
    }
    let double = Estimate {
        value: moments.mean,
        error: moments.std_error(),
    };
    let flagged = double.error > budget.target_rel_error * double.value.abs();
    let value = k * k * (2.0 * double.value - single.value * single.value);
    let mut error =
        k * k * ((2.0 * double.error).powi(2) + (2.0 * single.value * single.error).powi(2)).sqrt();
    if flagged {
        error *= 2.0;
    }
    Ok(VarianceEstimate {
        value,
        error,
        single: Estimate {
            value: single.value,
            error: single.error,
        },
        double,
        samples: moments.n as usize,
        flagged,
    })
}

/// Mean and variance for Brownian motion in one call.
pub fn bm_moments(f: &TestFunction, x: &[f64], budget: VarianceBudget) -> Result<AnalyticMoments> {
    let d = f.dim();
    let mean = bm_expectation(
        f,
        x,
        d,
        McBudget {
            samples: budget.max_samples.max(2),
            seed: budget.seed,
        },
    )?;
    let var = bm_variance(f, x, d, budget)?;
    Ok(AnalyticMoments {
        mean: mean.value,
        mean_error: mean.error,
        variance: Some(var.value),
        variance_error: Some(var.error),
    })
}

/// Mean only: no variance formula is available for fBm.
pub fn fbm_moments(
    f: &TestFunction,
    x: &[f64],
    hurst: f64,
    budget: McBudget,
) -> Result<AnalyticMoments> {
    let mean = fbm_expectation(f, x, f.dim(), hurst, budget)?;
    Ok(AnalyticMoments {
        mean: mean.value,
        mean_error: mean.error,
        variance: None,
        variance_error: None,
    })
}
