//! Test functions in `CL(R^d)`: continuous, bounded, integrable and
//! non-negative.
//!
//! Every function is a finite non-negative combination of radial profiles,
//! each sitting at its own center. A single profile is the common case; the
//! empty combination is the zero function.

use std::f64::consts::PI;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{check_dim, invalid, Result};
use crate::quad::{self, Tolerance};
use crate::rng::Domain;
use crate::special::{ball_volume, sphere_area};
use crate::stats::parallel_moments;

/// Radial shape of one mixture component, as a function of the distance to
/// its center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum Profile {
    /// `A exp(-r² / (2 σ²))`.
    Gaussian { amplitude: f64, width: f64 },
    /// `A exp(1 - 1 / (1 - (r/R)²))` inside the ball of radius `R`, zero outside.
    Bump { radius: f64, amplitude: f64 },
    /// Centered normal density with covariance `b I`.
    GaussianDensity { variance: f64 },
}

impl Profile {
    fn validate(&self) -> Result<()> {
        let ok = |name: &'static str, v: f64, positive: bool| {
            if !v.is_finite() || v < 0.0 || (positive && v == 0.0) {
                Err(invalid(name, format!("{v} is not admissible")))
            } else {
                Ok(())
            }
        };
        match *self {
            Profile::Gaussian { amplitude, width } => {
                ok("amplitude", amplitude, false)?;
                ok("width", width, true)
            }
            Profile::Bump { radius, amplitude } => {
                ok("amplitude", amplitude, false)?;
                ok("radius", radius, true)
            }
            Profile::GaussianDensity { variance } => ok("variance", variance, true),
        }
    }

    /// Value at distance `r` from the center.
    pub fn at(&self, r: f64) -> f64 {
        self.at_sq(r * r)
    }

    fn at_sq(&self, r2: f64) -> f64 {
        match *self {
            Profile::Gaussian { amplitude, width } => {
                amplitude * (-r2 / (2.0 * width * width)).exp()
            }
            Profile::Bump { radius, amplitude } => {
                let s2 = r2 / (radius * radius);
                if s2 >= 1.0 {
                    0.0
                } else {
                    amplitude * (1.0 - 1.0 / (1.0 - s2)).exp()
                }
            }
            Profile::GaussianDensity { variance } => {
                // dimension enters only through the normalizer; see `TestFunction`
                (-r2 / (2.0 * variance)).exp()
            }
        }
    }

    fn normalizer(&self, d: usize) -> f64 {
        match *self {
            Profile::GaussianDensity { variance } => (2.0 * PI * variance).powf(-(d as f64) / 2.0),
            _ => 1.0,
        }
    }

    fn peak(&self, d: usize) -> f64 {
        match *self {
            Profile::Gaussian { amplitude, .. } | Profile::Bump { amplitude, .. } => amplitude,
            Profile::GaussianDensity { .. } => self.normalizer(d),
        }
    }

    /// Closed-form L¹ norm where one exists.
    fn l1_closed(&self, d: usize) -> Option<f64> {
        match *self {
            Profile::Gaussian { amplitude, width } => {
                Some(amplitude * (2.0 * PI * width * width).powf(d as f64 / 2.0))
            }
            Profile::GaussianDensity { .. } => Some(1.0),
            Profile::Bump { .. } => None,
        }
    }

    /// Radius beyond which all mass lives in a negligible tail.
    fn outer_radius(&self) -> f64 {
        match *self {
            Profile::Gaussian { width, .. } => 12.0 * width,
            Profile::GaussianDensity { variance } => 12.0 * variance.sqrt(),
            Profile::Bump { radius, .. } => radius,
        }
    }

    /// `S_d ∫_0^∞ r^{d-1-α} φ(r) dr` with the algebraic singularity at the
    /// origin removed by `r = u^p`.
    fn radial_moment(&self, d: usize, alpha: f64) -> Result<f64> {
        let e = d as f64 - 1.0 - alpha;
        let norm = self.normalizer(d);
        let upper = self.outer_radius();
        let value = if e < 0.0 {
            let p = 1.0 / (1.0 + e);
            quad::integrate(
                |u| p * self.at(u.powf(p)),
                0.0,
                upper.powf(1.0 / p),
                Tolerance::rel(1e-13),
            )?
        } else {
            quad::integrate(
                |r| r.powf(e) * self.at(r),
                0.0,
                upper,
                Tolerance::rel(1e-13),
            )?
        };
        Ok(sphere_area(d) * norm * value.value)
    }

    fn l1(&self, d: usize) -> Result<f64> {
        match self.l1_closed(d) {
            Some(v) => Ok(v),
            None => self.radial_moment(d, 0.0),
        }
    }

    /// Steepest slope of the profile.
    fn lipschitz(&self, d: usize) -> f64 {
        match *self {
            Profile::Gaussian { amplitude, width } => amplitude / width * (-0.5f64).exp(),
            Profile::GaussianDensity { variance } => {
                self.normalizer(d) / variance.sqrt() * (-0.5f64).exp()
            }
            Profile::Bump { radius, .. } => {
                // |φ'(r)| on a fine grid; the maximum sits well inside the ball
                (1..4000)
                    .map(|i| {
                        let r = radius * i as f64 / 4000.0;
                        let h = radius * 1e-6;
                        ((self.at(r + h) - self.at(r - h)) / (2.0 * h)).abs()
                    })
                    .fold(0.0, f64::max)
                    * 1.01
            }
        }
    }
}

/// One weighted component of a [`TestFunction`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Term {
    pub weight: f64,
    pub center: Vec<f64>,
    pub profile: Profile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TestFunction {
    dim: usize,
    terms: Vec<Term>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClNorm {
    pub sup_norm: f64,
    pub l1_norm: f64,
    pub cl_norm: f64,
}

impl ClNorm {
    fn new(sup_norm: f64, l1_norm: f64) -> Self {
        Self {
            sup_norm,
            l1_norm,
            cl_norm: sup_norm + l1_norm,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntegralMethod {
    Radial,
    MonteCarlo,
}

/// `∫ f(x+y) |y|^{-α} dy` with its error estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PotentialIntegral {
    pub value: f64,
    pub error: f64,
    pub method: IntegralMethod,
}

/// Sample budget and seed for the Monte Carlo branches of the analytic code.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McBudget {
    pub samples: usize,
    pub seed: u64,
}

impl Default for McBudget {
    fn default() -> Self {
        Self {
            samples: 1_000_000,
            seed: 0x5eed,
        }
    }
}

impl TestFunction {
    fn single(dim: usize, profile: Profile) -> Result<Self> {
        if dim == 0 {
            return Err(invalid("dim", "must be positive"));
        }
        profile.validate()?;
        Ok(Self {
            dim,
            terms: vec![Term {
                weight: 1.0,
                center: vec![0.0; dim],
                profile,
            }],
        })
    }

    pub fn gaussian(dim: usize, amplitude: f64, width: f64) -> Result<Self> {
        Self::single(dim, Profile::Gaussian { amplitude, width })
    }

    pub fn bump(dim: usize, radius: f64, amplitude: f64) -> Result<Self> {
        Self::single(dim, Profile::Bump { radius, amplitude })
    }

    pub fn gaussian_density(dim: usize, variance: f64) -> Result<Self> {
        Self::single(dim, Profile::GaussianDensity { variance })
    }

    pub fn zero(dim: usize) -> Self {
        Self { dim, terms: vec![] }
    }

    /// Non-negative combination `Σ w_i f_i`; nested mixtures are flattened.
    pub fn mixture(dim: usize, parts: Vec<(f64, TestFunction)>) -> Result<Self> {
        let mut terms = Vec::new();
        for (w, f) in parts {
            check_dim(dim, f.dim)?;
            if !w.is_finite() || w < 0.0 {
                return Err(invalid(
                    "weight",
                    format!("{w} must be finite and non-negative"),
                ));
            }
            terms.extend(f.terms.into_iter().map(|t| Term {
                weight: t.weight * w,
                ..t
            }));
        }
        Ok(Self { dim, terms })
    }

    /// Builds a function directly from components.
    pub fn from_terms(dim: usize, terms: Vec<Term>) -> Result<Self> {
        for t in &terms {
            check_dim(dim, t.center.len())?;
            t.profile.validate()?;
            if !t.weight.is_finite() || t.weight < 0.0 {
                return Err(invalid(
                    "weight",
                    format!("{} must be finite and non-negative", t.weight),
                ));
            }
        }
        Ok(Self { dim, terms })
    }

    /// Moves every component so that the new function is `y ↦ f(y - shift)`.
    pub fn translated(&self, shift: &[f64]) -> Result<Self> {
        check_dim(self.dim, shift.len())?;
        let terms = self
            .terms
            .iter()
            .map(|t| Term {
                center: t.center.iter().zip(shift).map(|(c, s)| c + s).collect(),
                ..t.clone()
            })
            .collect();
        Ok(Self {
            dim: self.dim,
            terms,
        })
    }

    pub fn scaled(&self, factor: f64) -> Result<Self> {
        Self::mixture(self.dim, vec![(factor, self.clone())])
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn is_zero(&self) -> bool {
        self.terms
            .iter()
            .all(|t| t.weight == 0.0 || t.profile.peak(self.dim) == 0.0)
    }

    /// `f(x)`; checks the dimension.
    pub fn eval(&self, x: &[f64]) -> Result<f64> {
        check_dim(self.dim, x.len())?;
        Ok(self.value(x))
    }

    /// `f(x)` without the dimension check, for hot loops.
    #[inline]
    pub fn value(&self, x: &[f64]) -> f64 {
        self.terms
            .iter()
            .map(|t| {
                let r2: f64 = x
                    .iter()
                    .zip(&t.center)
                    .map(|(a, c)| (a - c) * (a - c))
                    .sum();
                t.weight * t.profile.normalizer(self.dim) * t.profile.at_sq(r2)
            })
            .sum()
    }

    /// Common center of all components, if there is one.
    pub fn radial_center(&self) -> Option<&[f64]> {
        let first = self.terms.first()?;
        self.terms
            .iter()
            .all(|t| t.center == first.center)
            .then_some(first.center.as_slice())
    }

    pub fn cl_norm(&self) -> Result<ClNorm> {
        let mut l1 = 0.0;
        for t in &self.terms {
            l1 += t.weight * t.profile.l1(self.dim)?;
        }
        Ok(ClNorm::new(self.sup_norm(), l1))
    }

    /// L¹ norm from radial quadrature of every component, ignoring closed forms.
    pub fn l1_by_quadrature(&self) -> Result<f64> {
        let mut l1 = 0.0;
        for t in &self.terms {
            l1 += t.weight * t.profile.radial_moment(self.dim, 0.0)?;
        }
        Ok(l1)
    }

    fn sup_norm(&self) -> f64 {
        if self.radial_center().is_some() {
            // every profile peaks at the shared center
            return self
                .terms
                .iter()
                .map(|t| t.weight * t.profile.peak(self.dim))
                .sum();
        }
        // separate centers: hill-climb from each center
        let mut best = 0.0f64;
        for t in &self.terms {
            let mut x = t.center.clone();
            let mut fx = self.value(&x);
            let mut step = t.profile.outer_radius() / 12.0;
            while step > 1e-10 {
                let mut moved = false;
                for i in 0..self.dim {
                    for s in [step, -step] {
                        x[i] += s;
                        let v = self.value(&x);
                        if v > fx {
                            fx = v;
                            moved = true;
                            break;
                        }
                        x[i] -= s;
                    }
                }
                if !moved {
                    step *= 0.5;
                }
            }
            best = best.max(fx);
        }
        best
    }

    /// `(center, mass, variance)` of every component when all of them are
    /// Gaussian, so that `f = Σ mass · N(center, variance I)`.
    pub fn gaussian_components(&self) -> Option<Vec<(Vec<f64>, f64, f64)>> {
        self.terms
            .iter()
            .map(|t| {
                let variance = match t.profile {
                    Profile::Gaussian { width, .. } => width * width,
                    Profile::GaussianDensity { variance } => variance,
                    Profile::Bump { .. } => return None,
                };
                let mass = t.weight * t.profile.l1_closed(self.dim)?;
                Some((t.center.clone(), mass, variance))
            })
            .collect()
    }

    /// Global Lipschitz bound `Σ w_i Lip(φ_i)`.
    pub fn lipschitz_bound(&self) -> f64 {
        self.terms
            .iter()
            .map(|t| t.weight * t.profile.lipschitz(self.dim))
            .sum()
    }

    /// For each component, a center and a radius outside of which the
    /// component is below `threshold / (number of components)`.
    pub fn negligible_beyond(&self, threshold: f64) -> Vec<(Vec<f64>, f64)> {
        let share = threshold / self.terms.len().max(1) as f64;
        self.terms
            .iter()
            .filter(|t| t.weight > 0.0)
            .map(|t| {
                let peak = t.weight * t.profile.peak(self.dim);
                let r = match t.profile {
                    Profile::Bump { radius, .. } => radius,
                    Profile::Gaussian { width, .. } => gaussian_radius(peak, width * width, share),
                    Profile::GaussianDensity { variance } => gaussian_radius(peak, variance, share),
                };
                (t.center.clone(), r)
            })
            .collect()
    }

    /// Mass of `f` outside the ball of radius `radius` about `origin`, bounded
    /// above component by component.
    pub fn mass_outside_ball(&self, origin: &[f64], radius: f64) -> Result<f64> {
        check_dim(self.dim, origin.len())?;
        let mut total = 0.0;
        for t in &self.terms {
            let offset: f64 = origin
                .iter()
                .zip(&t.center)
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            let inner = radius - offset;
            let mass = t.profile.l1(self.dim)?;
            let outside = if inner <= 0.0 {
                mass
            } else {
                let norm = t.profile.normalizer(self.dim) * sphere_area(self.dim);
                let e = (self.dim - 1) as i32;
                let tail = quad::integrate_to_infinity(
                    |r| r.powi(e) * t.profile.at(r),
                    inner,
                    Tolerance::rel(1e-10),
                )?;
                (norm * tail.value).min(mass)
            };
            total += t.weight * outside;
        }
        Ok(total)
    }

    /// `∫ f(x+y) |y|^{-α} dy` for `0 < α < d`.
    ///
    /// Exact 1-D radial quadrature when `f` is radial about `x`; otherwise
    /// importance-sampled Monte Carlo split at `|y| = 1`.
    pub fn radial_potential_integral(
        &self,
        x: &[f64],
        alpha: f64,
        budget: McBudget,
    ) -> Result<PotentialIntegral> {
        check_dim(self.dim, x.len())?;
        let d = self.dim as f64;
        if !(alpha > 0.0 && alpha < d) {
            return Err(invalid("alpha", format!("{alpha} is outside (0, {d})")));
        }
        if self.is_zero() {
            return Ok(PotentialIntegral {
                value: 0.0,
                error: 0.0,
                method: IntegralMethod::Radial,
            });
        }
        if self.radial_center() == Some(x) {
            let mut value = 0.0;
            for t in &self.terms {
                value += t.weight * t.profile.radial_moment(self.dim, alpha)?;
            }
            return Ok(PotentialIntegral {
                value,
                error: 1e-12 * value,
                method: IntegralMethod::Radial,
            });
        }
        self.potential_monte_carlo(x, alpha, budget)
    }

    fn potential_monte_carlo(
        &self,
        x: &[f64],
        alpha: f64,
        budget: McBudget,
    ) -> Result<PotentialIntegral> {
        if budget.samples < 2 {
            return Err(invalid("samples", "need at least two Monte Carlo samples"));
        }
        let d = self.dim;
        let envelope = Envelope::new(self)?;
        let ball_mass = sphere_area(d) / (d as f64 - alpha);
        let half = budget.samples / 2;

        let inner = parallel_moments(half, budget.seed, Domain::Quadrature, 0, |rng| {
            let mut y = vec![0.0; d];
            sample_singular_ball(rng, d, alpha, &mut y);
            let w: Vec<f64> = x.iter().zip(&y).map(|(a, b)| a + b).collect();
            ball_mass * self.value(&w)
        });
        let outer = parallel_moments(
            budget.samples - half,
            budget.seed,
            Domain::Quadrature,
            1 << 40,
            |rng| {
                let mut w = vec![0.0; d];
                envelope.sample(rng, &mut w);
                let r2: f64 = w.iter().zip(x).map(|(a, b)| (a - b) * (a - b)).sum();
                if r2 <= 1.0 {
                    return 0.0;
                }
                self.value(&w) * r2.powf(-alpha / 2.0) / envelope.density(&w)
            },
        );
        Ok(PotentialIntegral {
            value: inner.mean + outer.mean,
            error: (inner.std_error().powi(2) + outer.std_error().powi(2)).sqrt(),
            method: IntegralMethod::MonteCarlo,
        })
    }
}

fn gaussian_radius(peak: f64, variance: f64, threshold: f64) -> f64 {
    if peak <= threshold {
        0.0
    } else {
        (2.0 * variance * (peak / threshold).ln()).sqrt()
    }
}

pub(crate) fn sample_direction<R: Rng + ?Sized>(rng: &mut R, out: &mut [f64]) {
    loop {
        let mut n2 = 0.0;
        for v in out.iter_mut() {
            *v = rng.sample(StandardNormal);
            n2 += *v * *v;
        }
        if n2 > 1e-300 {
            let inv = n2.sqrt().recip();
            out.iter_mut().for_each(|v| *v *= inv);
            return;
        }
    }
}

/// Draws `y` in the unit ball with density proportional to `|y|^{-α}`.
pub(crate) fn sample_singular_ball<R: Rng + ?Sized>(
    rng: &mut R,
    d: usize,
    alpha: f64,
    out: &mut [f64],
) {
    sample_direction(rng, out);
    let u: f64 = rng.random();
    let r = u.powf(1.0 / (d as f64 - alpha));
    out.iter_mut().for_each(|v| *v *= r);
}

/// Sampling envelope of a test function: a mixture of per-component
/// densities, weighted by component mass, whose ratio to `f` is bounded.
pub(crate) struct Envelope {
    dim: usize,
    parts: Vec<(f64, Vec<f64>, Profile)>,
    cumulative: Vec<f64>,
}

impl Envelope {
    pub(crate) fn new(f: &TestFunction) -> Result<Self> {
        let mut parts = Vec::new();
        let mut cumulative = Vec::new();
        let mut acc = 0.0;
        for t in &f.terms {
            let mass = t.weight * t.profile.l1(f.dim)?;
            if mass > 0.0 {
                acc += mass;
                parts.push((mass, t.center.clone(), t.profile));
                cumulative.push(acc);
            }
        }
        for (m, _, _) in &mut parts {
            *m /= acc;
        }
        cumulative.iter_mut().for_each(|c| *c /= acc);
        Ok(Self {
            dim: f.dim,
            parts,
            cumulative,
        })
    }

    pub(crate) fn sample<R: Rng + ?Sized>(&self, rng: &mut R, out: &mut [f64]) {
        let u: f64 = rng.random();
        let idx = self
            .cumulative
            .iter()
            .position(|&c| u < c)
            .unwrap_or(self.parts.len() - 1);
        let (_, center, profile) = &self.parts[idx];
        match *profile {
            Profile::Gaussian { width, .. } => {
                for (o, c) in out.iter_mut().zip(center) {
                    *o = c + width * rng.sample::<f64, _>(StandardNormal);
                }
            }
            Profile::GaussianDensity { variance } => {
                let s = variance.sqrt();
                for (o, c) in out.iter_mut().zip(center) {
                    *o = c + s * rng.sample::<f64, _>(StandardNormal);
                }
            }
            Profile::Bump { radius, .. } => {
                sample_direction(rng, out);
                let r = radius * rng.random::<f64>().powf(1.0 / self.dim as f64);
                for (o, c) in out.iter_mut().zip(center) {
                    *o = c + r * *o;
                }
            }
        }
    }

    pub(crate) fn density(&self, w: &[f64]) -> f64 {
        let d = self.dim as f64;
        self.parts
            .iter()
            .map(|(p, center, profile)| {
                let r2: f64 = w.iter().zip(center).map(|(a, b)| (a - b) * (a - b)).sum();
                let q = match *profile {
                    Profile::Gaussian { width, .. } => {
                        let v = width * width;
                        (2.0 * PI * v).powf(-d / 2.0) * (-r2 / (2.0 * v)).exp()
                    }
                    Profile::GaussianDensity { variance } => {
                        (2.0 * PI * variance).powf(-d / 2.0) * (-r2 / (2.0 * variance)).exp()
                    }
                    Profile::Bump { radius, .. } => {
                        if r2 < radius * radius {
                            1.0 / (ball_volume(self.dim) * radius.powf(d))
                        } else {
                            0.0
                        }
                    }
                };
                p * q
            })
            .sum()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn origin(d: usize) -> Vec<f64> {
        vec![0.0; d]
    }

    #[test]
    fn eval_examples() {
        let g = TestFunction::gaussian(3, 1.0, 1.0).unwrap();
        assert_eq!(g.eval(&[0.0, 0.0, 0.0]).unwrap(), 1.0);
        let v = g.eval(&[1.0, 0.0, 0.0]).unwrap();
        assert!((v - (-0.5f64).exp()).abs() < 1e-15);
        assert!((v - 0.606531).abs() < 1e-6);
        let b = TestFunction::bump(3, 1.0, 1.0).unwrap();
        assert_eq!(b.eval(&[2.0, 0.0, 0.0]).unwrap(), 0.0);
        assert!(g.eval(&[0.0, 0.0]).is_err());
    }

    #[test]
    fn rejects_bad_parameters() {
        assert!(TestFunction::gaussian(3, -1.0, 1.0).is_err());
        assert!(TestFunction::gaussian(3, 1.0, 0.0).is_err());
        assert!(TestFunction::bump(3, f64::NAN, 1.0).is_err());
        assert!(TestFunction::gaussian(0, 1.0, 1.0).is_err());
    }

    #[test]
    fn cl_norm_of_unit_gaussian() {
        // radial quadrature oracle: 4π ∫ r² e^{-r²/2} dr = (2π)^{3/2}
        let oracle = 4.0
            * PI
            * quad::integrate_to_infinity(
                |r| r * r * (-r * r / 2.0).exp(),
                0.0,
                Tolerance::default(),
            )
            .unwrap()
            .value;
        let n = TestFunction::gaussian(3, 1.0, 1.0)
            .unwrap()
            .cl_norm()
            .unwrap();
        assert_eq!(n.sup_norm, 1.0);
        assert!((n.l1_norm - oracle).abs() / oracle < 1e-10);
        assert!((n.l1_norm - 15.7496).abs() < 1e-4);
        assert!((n.cl_norm - 16.7496).abs() < 1e-4);
        assert_eq!(n.cl_norm, n.sup_norm + n.l1_norm);
    }

    #[test]
    fn cl_norm_of_zero_and_scaling() {
        let z = TestFunction::zero(3).cl_norm().unwrap();
        assert_eq!((z.sup_norm, z.l1_norm, z.cl_norm), (0.0, 0.0, 0.0));
        let f = TestFunction::bump(3, 1.5, 0.7).unwrap();
        let a = f.cl_norm().unwrap();
        let b = f.scaled(2.0).unwrap().cl_norm().unwrap();
        assert!((b.sup_norm - 2.0 * a.sup_norm).abs() < 1e-14);
        assert!((b.l1_norm - 2.0 * a.l1_norm).abs() < 1e-12);
        assert!((b.cl_norm - 2.0 * a.cl_norm).abs() < 1e-12);
    }

    #[test]
    fn quadrature_l1_matches_closed_forms() {
        for d in 3..=5 {
            for f in [
                TestFunction::gaussian(d, 1.3, 0.8).unwrap(),
                TestFunction::gaussian_density(d, 2.0).unwrap(),
            ] {
                let exact = f.cl_norm().unwrap().l1_norm;
                let numeric = f.l1_by_quadrature().unwrap();
                assert!((exact - numeric).abs() / exact < 1e-6, "d={d}");
            }
        }
    }

    #[test]
    fn sup_norm_with_separate_centers() {
        let a = TestFunction::gaussian(3, 1.0, 1.0).unwrap();
        let b = a.translated(&[10.0, 0.0, 0.0]).unwrap();
        let f = TestFunction::mixture(3, vec![(1.0, a), (2.0, b)]).unwrap();
        let sup = f.cl_norm().unwrap().sup_norm;
        assert!((sup - 2.0).abs() < 1e-9, "{sup}");
    }

    #[test]
    fn potential_of_unit_gaussian() {
        // 4π ∫ r e^{-r²/2} dr = 4π
        let g = TestFunction::gaussian(3, 1.0, 1.0).unwrap();
        let p = g
            .radial_potential_integral(&origin(3), 1.0, McBudget::default())
            .unwrap();
        assert_eq!(p.method, IntegralMethod::Radial);
        assert!((p.value - 4.0 * PI).abs() < 1e-10);
        assert!((p.value - 12.56637).abs() < 1e-5);
    }

    #[test]
    fn potential_rejects_alpha_out_of_range() {
        let g = TestFunction::gaussian(3, 1.0, 1.0).unwrap();
        for alpha in [0.0, 3.0, -1.0, 4.5] {
            assert!(g
                .radial_potential_integral(&origin(3), alpha, McBudget::default())
                .is_err());
        }
        let z = TestFunction::zero(3);
        assert_eq!(
            z.radial_potential_integral(&origin(3), 1.0, McBudget::default())
                .unwrap()
                .value,
            0.0
        );
    }

    /// Split-ball bound: the integral is at most `S_d/(d-α) sup f + ‖f‖₁`.
    #[test]
    fn split_ball_bound_holds() {
        let fs = [
            TestFunction::gaussian(3, 1.0, 1.0).unwrap(),
            TestFunction::bump(3, 1.0, 2.0).unwrap(),
            TestFunction::gaussian_density(4, 0.5).unwrap(),
            TestFunction::bump(4, 3.0, 0.2).unwrap(),
        ];
        for f in fs {
            let d = f.dim();
            for alpha in [d as f64 - 2.0, d as f64 - 1.0 / 0.75] {
                let n = f.cl_norm().unwrap();
                let c1 = sphere_area(d) / (d as f64 - alpha);
                let p = f
                    .radial_potential_integral(&origin(d), alpha, McBudget::default())
                    .unwrap();
                assert!(p.value <= c1 * n.sup_norm + n.l1_norm, "d={d} α={alpha}");
            }
        }
    }

    /// Independent deterministic oracle for off-center Gaussians in d = 3:
    /// ∫ g(|w|) |w - p|^{-1} dw = 4π ∫ g(r) r² / max(r, |p|) dr.
    #[test]
    fn monte_carlo_branch_matches_newton_shell_theorem() {
        let f = TestFunction::gaussian(3, 1.0, 1.0)
            .unwrap()
            .translated(&[1.5, 0.0, 0.0])
            .unwrap();
        let p = f
            .radial_potential_integral(&origin(3), 1.0, McBudget::default())
            .unwrap();
        assert_eq!(p.method, IntegralMethod::MonteCarlo);
        let s = 1.5;
        let oracle = 4.0
            * PI
            * quad::integrate(
                |r| r * r * (-r * r / 2.0).exp() / r.max(s),
                0.0,
                15.0,
                Tolerance::default(),
            )
            .unwrap()
            .value;
        assert!(
            (p.value - oracle).abs() < 4.0 * p.error,
            "{} vs {oracle} ± {}",
            p.value,
            p.error
        );
        assert!(p.error / oracle < 5e-3);
    }

    #[test]
    fn monte_carlo_is_reproducible() {
        let f = TestFunction::bump(3, 1.0, 1.0)
            .unwrap()
            .translated(&[0.3, 0.2, 0.0])
            .unwrap();
        let b = McBudget {
            samples: 20_000,
            seed: 3,
        };
        let a = f.radial_potential_integral(&origin(3), 1.0, b).unwrap();
        let c = f.radial_potential_integral(&origin(3), 1.0, b).unwrap();
        assert_eq!(a, c);
    }

    #[test]
    fn mass_outside_ball_of_gaussian() {
        let g = TestFunction::gaussian_density(3, 1.0).unwrap();
        assert!((g.mass_outside_ball(&origin(3), 0.0).unwrap() - 1.0).abs() < 1e-12);
        let tail = g.mass_outside_ball(&origin(3), 3.0).unwrap();
        // χ²₃ survival at 9: 2(1 - Φ(3)) + sqrt(18/π) e^{-9/2}
        let chi2 =
            (1.0 - crate::special::erf(3.0 / 2f64.sqrt())) + (18.0 / PI).sqrt() * (-4.5f64).exp();
        assert!((tail - chi2).abs() < 1e-9, "{tail} vs {chi2}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// Linearity and monotonicity on radial pairs sharing a center.
        #[test]
        fn potential_linear_and_monotone(
            a in 0.1f64..3.0, sa in 0.3f64..2.0,
            b in 0.1f64..3.0, rb in 0.3f64..2.0,
            alpha in 0.2f64..2.8,
        ) {
            let f = TestFunction::gaussian(3, a, sa).unwrap();
            let g = TestFunction::bump(3, rb, b).unwrap();
            let sum = TestFunction::mixture(3, vec![(1.0, f.clone()), (1.0, g.clone())]).unwrap();
            let x = origin(3);
            let budget = McBudget::default();
            let pf = f.radial_potential_integral(&x, alpha, budget).unwrap().value;
            let pg = g.radial_potential_integral(&x, alpha, budget).unwrap().value;
            let ps = sum.radial_potential_integral(&x, alpha, budget).unwrap().value;
            prop_assert!((ps - pf - pg).abs() <= 1e-9 * ps);
            // f ≤ f + g pointwise
            prop_assert!(pf <= ps && pg <= ps);
        }
    }
}
