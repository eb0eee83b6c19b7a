use std::f64::consts::PI;

use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Error, Result};
use crate::funcs::sample_direction;
use crate::quad::{self, Tolerance};
use crate::rng::{Domain, StreamKey};
use crate::special::{gamma, sphere_area};

/// Radial shape of a jump density.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum KernelFamily {
    /// Centered normal with variance `variance` per coordinate.
    Gaussian { variance: f64 },
    /// `a(x) = C e^{-δ|x|}` with `C = δ^d / (|S^{d-1}| Γ(d))`.
    ExponentialTail { scale: f64 },
}

/// Jump density `a` of a unit-rate compound Poisson process in `R^d`.
///
/// `shift` moves the density off the origin; a shifted kernel is not
/// symmetric and fails validation. It exists to exercise that path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpKernel {
    dim: usize,
    family: KernelFamily,
    shift: Vec<f64>,
}

impl JumpKernel {
    pub fn new(dim: usize, family: KernelFamily) -> Result<Self> {
        if dim < 3 {
            return Err(Error::Divergent(format!(
                "compound Poisson potential needs d >= 3, got d = {dim}"
            )));
        }
        match family {
            KernelFamily::Gaussian { variance } if !(variance > 0.0 && variance.is_finite()) => {
                return Err(invalid("variance", format!("{variance} must be positive")));
            }
            KernelFamily::ExponentialTail { scale } if !(scale > 0.0 && scale.is_finite()) => {
                return Err(invalid("scale", format!("{scale} must be positive")));
            }
            _ => {}
        }
        Ok(Self {
            dim,
            family,
            shift: vec![0.0; dim],
        })
    }

    pub fn gaussian(dim: usize, variance: f64) -> Result<Self> {
        Self::new(dim, KernelFamily::Gaussian { variance })
    }

    pub fn exponential_tail(dim: usize, scale: f64) -> Result<Self> {
        Self::new(dim, KernelFamily::ExponentialTail { scale })
    }

    /// The same kernel centered at `shift` instead of the origin.
    pub fn shifted(mut self, shift: &[f64]) -> Result<Self> {
        check_dim(self.dim, shift.len())?;
        if shift.iter().any(|v| !v.is_finite()) {
            return Err(invalid("shift", "must be finite"));
        }
        self.shift = shift.to_vec();
        Ok(self)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn family(&self) -> KernelFamily {
        self.family
    }

    pub fn shift(&self) -> &[f64] {
        &self.shift
    }

    pub fn is_centered(&self) -> bool {
        self.shift.iter().all(|&v| v == 0.0)
    }

    /// Normalizing constant of the radial profile.
    pub fn normalizer(&self) -> f64 {
        let d = self.dim as f64;
        match self.family {
            KernelFamily::Gaussian { variance } => (2.0 * PI * variance).powf(-d / 2.0),
            KernelFamily::ExponentialTail { scale } => {
                scale.powf(d) / (sphere_area(self.dim) * gamma(d))
            }
        }
    }

    /// Density at distance `r` from the kernel's center.
    pub fn radial_density(&self, r: f64) -> f64 {
        let c = self.normalizer();
        match self.family {
            KernelFamily::Gaussian { variance } => c * (-r * r / (2.0 * variance)).exp(),
            KernelFamily::ExponentialTail { scale } => c * (-scale * r).exp(),
        }
    }

    /// `a(x)`; panics in debug builds on a dimension mismatch.
    pub fn density(&self, x: &[f64]) -> f64 {
        debug_assert_eq!(x.len(), self.dim);
        let r2: f64 = x
            .iter()
            .zip(&self.shift)
            .map(|(a, s)| (a - s) * (a - s))
            .sum();
        self.radial_density(r2.sqrt())
    }

    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.density(x))
    }

    /// Characteristic function of the centered profile at `|k|`.
    pub fn radial_char(&self, k: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian { variance } => (-variance * k * k / 2.0).exp(),
            KernelFamily::ExponentialTail { scale } => {
                let p = (self.dim as f64 + 1.0) / 2.0;
                (-p * (k * k / (scale * scale)).ln_1p()).exp()
            }
        }
    }

    /// `1 - â(k)` without cancellation at small `k`.
    pub fn one_minus_radial_char(&self, k: f64) -> f64 {
        match self.family {
            KernelFamily::Gaussian { variance } => -(-variance * k * k / 2.0).exp_m1(),
            KernelFamily::ExponentialTail { scale } => {
                let p = (self.dim as f64 + 1.0) / 2.0;
                -(-p * (k * k / (scale * scale)).ln_1p()).exp_m1()
            }
        }
    }

    /// `â(k) = ∫ a(x) e^{-i(k, x)} dx`.
    pub fn char_fn(&self, k: &[f64]) -> Complex64 {
        debug_assert_eq!(k.len(), self.dim);
        let kn = k.iter().map(|v| v * v).sum::<f64>().sqrt();
        let phase: f64 = k.iter().zip(&self.shift).map(|(a, b)| a * b).sum();
        Complex64::from_polar(self.radial_char(kn), -phase)
    }

    /// Variance of one coordinate of a jump about the kernel's center.
    pub fn coordinate_variance(&self) -> f64 {
        match self.family {
            KernelFamily::Gaussian { variance } => variance,
            KernelFamily::ExponentialTail { scale } => (self.dim as f64 + 1.0) / (scale * scale),
        }
    }

    /// `E|ξ|²` for a jump `ξ`.
    pub fn second_moment(&self) -> f64 {
        let s2: f64 = self.shift.iter().map(|v| v * v).sum();
        self.dim as f64 * self.coordinate_variance() + s2
    }

    /// `A` with `a^{*n}(x) <= A n^{-d/2}` for every `n >= 1` and `x`.
    ///
    /// Both families have `â >= 0`, so `a^{*n}(x) <= (2π)^{-d} ∫ â^n dk`. For
    /// the exponential tail that integral is a Beta function, bounded through
    /// `Γ(y) / Γ(y + d/2) <= y^{-d/2}` at `y = (n(d+1) - d)/2 >= n/2`.
    pub fn convolution_peak_coefficient(&self) -> f64 {
        let d = self.dim as f64;
        match self.family {
            KernelFamily::Gaussian { variance } => (2.0 * PI * variance).powf(-d / 2.0),
            KernelFamily::ExponentialTail { scale } => {
                sphere_area(self.dim) * scale.powf(d) * gamma(d / 2.0) * 2f64.powf(d / 2.0)
                    / (2.0 * (2.0 * PI).powf(d))
            }
        }
    }

    /// Radius beyond which the density is below `1e-17` of its peak.
    pub fn effective_radius(&self) -> f64 {
        let reach = match self.family {
            KernelFamily::Gaussian { variance } => (2.0 * variance * 17.0 * 10f64.ln()).sqrt(),
            // r^{d-1} e^{-δr} mass still matters well past the density cut
            KernelFamily::ExponentialTail { scale } => (45.0 + 2.0 * self.dim as f64) / scale,
        };
        reach + self.shift.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn sample_jump<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        debug_assert_eq!(out.len(), self.dim);
        match self.family {
            KernelFamily::Gaussian { variance } => {
                let s = variance.sqrt();
                for v in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = s * z;
                }
            }
            KernelFamily::ExponentialTail { scale } => {
                sample_direction(rng, out);
                let radius = Gamma::new(self.dim as f64, 1.0 / scale)
                    .expect("shape and scale are positive")
                    .sample(rng);
                out.iter_mut().for_each(|v| *v *= radius);
            }
        }
        out.iter_mut().zip(&self.shift).for_each(|(v, s)| *v += s);
    }

    /// `S_d ∫_0^∞ r^{d-1+p} φ(r) dr` for the radial profile `φ`, integrated up
    /// to `cut` (`None` for the whole half-line).
    fn radial_moment(&self, p: i32, cut: Option<f64>) -> Result<f64> {
        let e = self.dim as i32 - 1 + p;
        let f = |r: f64| r.powi(e) * self.radial_density(r);
        let tol = Tolerance::rel(1e-12);
        let v = match cut {
            Some(c) => quad::integrate(f, 0.0, c, tol)?,
            None => quad::integrate_to_infinity(f, 0.0, tol)?,
        };
        Ok(sphere_area(self.dim) * v.value)
    }

    /// `â(|k|)` computed from the density alone: the 1-D marginal
    /// `m(s) = ∫_{R^{d-1}} a(s, y) dy` followed by its cosine transform.
    pub fn numeric_radial_char(&self, k: f64) -> Result<f64> {
        let d = self.dim;
        let area = sphere_area(d - 1);
        let e = d as i32 - 2;
        let marginal = |s: f64| -> f64 {
            let inner = quad::integrate_to_infinity(
                |rho| rho.powi(e) * self.radial_density((s * s + rho * rho).sqrt()),
                0.0,
                Tolerance::rel(1e-11),
            );
            inner.map(|v| area * v.value).unwrap_or(f64::NAN)
        };
        let cut = self.effective_radius();
        let tol = Tolerance {
            abs: 1e-14,
            rel: 1e-10,
            max_intervals: 2000,
        };
        let v = quad::integrate(|s| 2.0 * (k * s).cos() * marginal(s), 0.0, cut, tol)?;
        if !v.value.is_finite() {
            return Err(Error::Quadrature(format!("marginal transform at k = {k}")));
        }
        Ok(v.value)
    }
}

/// One condition of the kernel validation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub passed: bool,
    pub value: f64,
    pub detail: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct KernelValidation {
    pub checks: Vec<Check>,
}

impl KernelValidation {
    pub fn passed(&self) -> bool {
        self.checks.iter().all(|c| c.passed)
    }

    pub fn first_failure(&self) -> Option<&Check> {
        self.checks.iter().find(|c| !c.passed)
    }

    pub fn get(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    /// `Err(KernelValidation)` naming the first failed condition.
    pub fn into_result(self) -> Result<Self> {
        match self.first_failure() {
            Some(c) => Err(Error::KernelValidation(format!("{}: {}", c.name, c.detail))),
            None => Ok(self),
        }
    }
}

fn check(name: &str, passed: bool, value: f64, detail: String) -> Check {
    Check {
        name: name.to_string(),
        passed,
        value,
        detail,
    }
}

/// Numerical checks of the conditions under which `G₀` has an integrable
/// Fourier representation. Failures are reported, never thrown.
pub fn validate_kernel(a: &JumpKernel) -> KernelValidation {
    let d = a.dim();
    let sigma = a.coordinate_variance().sqrt();
    let mut checks = Vec::new();

    // symmetry on pseudo-random points
    let mut rng = StreamKey::new(0, Domain::Validation, 0).rng();
    let mut x = vec![0.0; d];
    let mut neg = vec![0.0; d];
    let mut worst = 0.0f64;
    let peak = a.normalizer();
    for _ in 0..256 {
        for v in x.iter_mut() {
            let z: f64 = rng.sample(StandardNormal);
            *v = 1.5 * sigma * z;
        }
        neg.iter_mut().zip(&x).for_each(|(n, v)| *n = -v);
        worst = worst.max((a.density(&x) - a.density(&neg)).abs() / peak);
    }
    checks.push(check(
        "symmetry",
        worst <= 1e-12,
        worst,
        format!("max |a(x) - a(-x)| / a_max = {worst:.3e} over 256 points"),
    ));

    // unit mass
    match a.radial_moment(0, None) {
        Ok(m) => checks.push(check(
            "unit_mass",
            (m - 1.0).abs() <= 1e-9,
            m,
            format!("∫a = {m:.15}"),
        )),
        Err(e) => checks.push(check("unit_mass", false, f64::NAN, e.to_string())),
    }

    // second moment: converged as the cut-off doubles
    let cut = a.effective_radius();
    let shift2: f64 = a.shift().iter().map(|v| v * v).sum();
    match (
        a.radial_moment(2, Some(cut)),
        a.radial_moment(2, Some(2.0 * cut)),
    ) {
        (Ok(m1), Ok(m2)) => {
            let change = (m2 - m1).abs() / m2.max(1e-300);
            checks.push(check(
                "second_moment",
                m2.is_finite() && change <= 1e-8,
                m2 + shift2,
                format!(
                    "E|ξ|² = {:.12}, change on doubling the cut-off {change:.2e}",
                    m2 + shift2
                ),
            ));
        }
        (Err(e), _) | (_, Err(e)) => {
            checks.push(check("second_moment", false, f64::NAN, e.to_string()))
        }
    }

    // â(0) = 1, real-valued, |â| < 1 away from 0
    let mut dir = vec![0.0; d];
    let mut kv = vec![0.0; d];
    let mut max_im = 0.0f64;
    let mut max_abs = 0.0f64;
    let kmax = 20.0 / sigma;
    for i in 0..32 {
        sample_direction(&mut rng, &mut dir);
        let kn = kmax * (i as f64 + 1.0) / 32.0;
        kv.iter_mut().zip(&dir).for_each(|(k, u)| *k = kn * u);
        let c = a.char_fn(&kv);
        max_im = max_im.max(c.im.abs());
        max_abs = max_abs.max(c.norm());
    }
    checks.push(check(
        "transform_real",
        max_im <= 1e-12,
        max_im,
        format!("max |Im â(k)| = {max_im:.3e}"),
    ));
    let at_zero = a.char_fn(&vec![0.0; d]).re;
    checks.push(check(
        "transform_bounds",
        (at_zero - 1.0).abs() <= 1e-14 && max_abs < 1.0,
        max_abs,
        format!("â(0) = {at_zero}, max |â(k)| = {max_abs:.6} for 0 < |k| <= {kmax:.3}"),
    ));

    // integrability of â: dyadic shells must shrink
    let shell = |lo: f64| {
        quad::integrate(
            |k| k.powi(d as i32 - 1) * a.radial_char(k).abs(),
            lo,
            2.0 * lo,
            Tolerance::rel(1e-10),
        )
        .map(|v| v.value)
    };
    let k0 = 8.0 / sigma;
    match (shell(k0), shell(2.0 * k0), shell(4.0 * k0)) {
        (Ok(s1), Ok(s2), Ok(s3)) => {
            let negligible = s1 < 1e-14;
            let ratio = if negligible {
                0.0
            } else {
                (s3 / s2).max(s2 / s1)
            };
            checks.push(check(
                "transform_integrable",
                negligible || ratio < 0.9,
                ratio,
                format!("dyadic shell ratio of ∫|â| k^(d-1) dk beyond |k| = {k0:.3}: {ratio:.4}"),
            ));
        }
        (Err(e), _, _) | (_, Err(e), _) | (_, _, Err(e)) => checks.push(check(
            "transform_integrable",
            false,
            f64::NAN,
            e.to_string(),
        )),
    }

    // closed-form transform against the transform of the density itself
    let mut gap = 0.0f64;
    let mut failure = None;
    for k in [0.5, 1.0, 2.0] {
        match a.numeric_radial_char(k / sigma) {
            Ok(v) => gap = gap.max((v - a.radial_char(k / sigma)).abs()),
            Err(e) => failure = Some(e),
        }
    }
    match failure {
        Some(e) => checks.push(check(
            "transform_consistency",
            false,
            f64::NAN,
            e.to_string(),
        )),
        None => checks.push(check(
            "transform_consistency",
            gap <= 1e-7,
            gap,
            format!("max |â - numeric transform of a| = {gap:.3e} at |k| σ in {{0.5, 1, 2}}"),
        )),
    }

    // ellipticity near zero: 1 - Re â(k) >= C |k|²
    let mut c_fit = f64::INFINITY;
    for _ in 0..8 {
        sample_direction(&mut rng, &mut dir);
        for i in 1..=100 {
            let kn = i as f64 / (100.0 * sigma);
            kv.iter_mut().zip(&dir).for_each(|(k, u)| *k = kn * u);
            let phase: f64 = kv.iter().zip(a.shift()).map(|(k, s)| k * s).sum();
            // 1 - Re â = 1 - cos(phase) â_r, arranged to avoid cancellation
            let ar = a.radial_char(kn);
            let one_minus = a.one_minus_radial_char(kn) + ar * 2.0 * (phase / 2.0).sin().powi(2);
            c_fit = c_fit.min(one_minus / (kn * kn));
        }
    }
    checks.push(check(
        "ellipticity",
        c_fit > 0.0,
        c_fit,
        format!(
            "min (1 - Re â(k)) / |k|² = {c_fit:.6} on 0 < |k| <= {:.3}",
            1.0 / sigma
        ),
    ));

    KernelValidation { checks }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::StreamKey;

    #[test]
    fn gaussian_passes_every_check() {
        let a = JumpKernel::gaussian(3, 1.0).unwrap();
        let report = validate_kernel(&a);
        assert!(report.passed(), "{report:#?}");
        let c = report.get("ellipticity").unwrap().value;
        assert!(c >= 0.3, "{c}");
        // min over |k| <= 1 of (1 - e^{-k²/2}) / k² sits at |k| = 1
        assert!((c - (1.0 - (-0.5f64).exp())).abs() < 1e-12);
    }

    #[test]
    fn exponential_tail_passes_every_check() {
        for d in [3, 4, 5] {
            let a = JumpKernel::exponential_tail(d, 1.3).unwrap();
            let report = validate_kernel(&a);
            assert!(report.passed(), "d = {d}: {report:#?}");
        }
    }

    #[test]
    fn shifted_kernel_fails_symmetry_first() {
        let a = JumpKernel::gaussian(3, 1.0)
            .unwrap()
            .shifted(&[0.5, 0.0, 0.0])
            .unwrap();
        let report = validate_kernel(&a);
        assert!(!report.passed());
        assert_eq!(report.first_failure().unwrap().name, "symmetry");
        assert!(!report.get("transform_real").unwrap().passed);
        let err = report.into_result().unwrap_err();
        assert!(err.to_string().contains("symmetry"));
    }

    #[test]
    fn low_dimension_is_rejected() {
        assert!(matches!(
            JumpKernel::gaussian(2, 1.0),
            Err(Error::Divergent(_))
        ));
        assert!(JumpKernel::exponential_tail(3, 0.0).is_err());
    }

    #[test]
    fn exponential_transform_closed_form_in_three_dimensions() {
        // δ⁴ / (δ² + k²)²
        let delta: f64 = 0.7;
        let a = JumpKernel::exponential_tail(3, delta).unwrap();
        for k in [0.0, 0.3, 1.0, 4.0] {
            let exact = delta.powi(4) / (delta * delta + k * k).powi(2);
            assert!((a.radial_char(k) - exact).abs() < 1e-15);
            assert!(
                (a.numeric_radial_char(k).unwrap() - exact).abs() < 1e-8,
                "k = {k}"
            );
        }
    }

    #[test]
    fn sampled_jumps_match_second_moment() {
        for a in [
            JumpKernel::gaussian(3, 2.0).unwrap(),
            JumpKernel::exponential_tail(4, 1.5).unwrap(),
        ] {
            let mut rng = StreamKey::new(9, Domain::Validation, 1).rng();
            let mut x = vec![0.0; a.dim()];
            let n = 200_000;
            let mut sum = 0.0;
            let mut sum2 = 0.0;
            for _ in 0..n {
                a.sample_jump(&mut rng, &mut x);
                let r2: f64 = x.iter().map(|v| v * v).sum();
                sum += r2;
                sum2 += r2 * r2;
            }
            let mean = sum / n as f64;
            let se = ((sum2 / n as f64 - mean * mean) / n as f64).sqrt();
            assert!(
                (mean - a.second_moment()).abs() < 4.0 * se,
                "{mean} vs {}",
                a.second_moment()
            );
        }
    }

    #[test]
    fn convolution_peak_bound_holds() {
        // exact a^{*n}(0) = (2π)^{-d} S_d δ^d B(d/2, y) / 2 with y = (n(d+1) - d)/2
        for d in [3usize, 4, 5] {
            let delta = 1.3;
            let a = JumpKernel::exponential_tail(d, delta).unwrap();
            let coef = a.convolution_peak_coefficient();
            let df = d as f64;
            for n in 1..60 {
                let y = (n as f64 * (df + 1.0) - df) / 2.0;
                let beta = (crate::special::ln_gamma(df / 2.0) + crate::special::ln_gamma(y)
                    - crate::special::ln_gamma(df / 2.0 + y))
                .exp();
                let exact = sphere_area(d) * delta.powf(df) * beta / (2.0 * (2.0 * PI).powf(df));
                if n == 1 {
                    assert!((exact - a.normalizer()).abs() < 1e-12 * exact);
                }
                assert!(
                    exact <= coef * (n as f64).powf(-df / 2.0) * (1.0 + 1e-12),
                    "d {d} n {n}"
                );
            }
        }
    }

    #[test]
    fn one_minus_char_has_no_cancellation() {
        let a = JumpKernel::exponential_tail(3, 1.0).unwrap();
        let k: f64 = 1e-6;
        // 1 - (1 + k²)^{-2} = 2k² - 3k⁴ + ...
        let expected = 2.0 * k * k - 3.0 * k.powi(4);
        assert!((a.one_minus_radial_char(k) - expected).abs() / expected < 1e-9);
    }
}
