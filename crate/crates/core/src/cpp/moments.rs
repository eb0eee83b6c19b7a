use rand::distr::Distribution;
use rand_distr::weighted::WeightedAliasIndex;
use serde::{Deserialize, Serialize};

use super::green::{newtonian, GreenField};
use super::kernel::{JumpKernel, KernelFamily};
use crate::error::{check_dim, invalid, Error, Result};
use crate::funcs::{McBudget, TestFunction};
use crate::kernels::Estimate;
use crate::rng::Domain;
use crate::special::heat_tail;
use crate::stats::{chunked_sum, parallel_moments};

/// `E ∫_0^∞ f(x + X(t)) dt` for a unit-rate compound Poisson process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CppExpectation {
    pub value: f64,
    /// Quadrature, field and lattice-tail errors combined.
    pub error: f64,
    /// `∫ f(x+y) G₀(y) dy` restricted to the lattice.
    pub lattice_integral: f64,
    pub quadrature_error: f64,
    /// Bound on the part of `∫ f(x+y) G₀(y) dy` outside the lattice.
    pub tail_bound: f64,
    /// The lattice tail is not small next to the value.
    pub flagged: bool,
}

/// Variance of the perpetual integral of a unit-rate compound Poisson process.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CppVariance {
    /// `2 ∫∫ f(x+y) f(x+y+z) G₀(y) G₀(z) dy dz - (∫ f(x+y) G₀(y) dy)²`.
    pub verbatim: Estimate,
    /// Same formula with `G₀` replaced by the Green measure `δ₀ + G₀`,
    /// which also counts the holding time at the starting point.
    pub with_atom: Estimate,
    /// The Monte Carlo double integral `∫∫ f f G₀ G₀`.
    pub double: Estimate,
    /// `∫ f(x+y) G₀(y) dy` on the lattice.
    pub single: f64,
    pub samples: usize,
}

struct Weights {
    /// `f(x + y_j)` for every node.
    f: Vec<f64>,
    h_d: f64,
}

fn node_weights(f: &TestFunction, x: &[f64], field: &GreenField) -> Weights {
    let lattice = field.lattice();
    let values = (0..lattice.len())
        .map(|i| {
            let mut y = lattice.node(i);
            y.iter_mut().zip(x).for_each(|(v, xi)| *v += xi);
            f.value(&y)
        })
        .collect();
    Weights {
        f: values,
        h_d: lattice.cell_volume(),
    }
}

fn check_inputs(f: &TestFunction, x: &[f64], a: &JumpKernel, field: &GreenField) -> Result<()> {
    check_dim(a.dim(), f.dim())?;
    check_dim(a.dim(), x.len())?;
    check_dim(a.dim(), field.lattice().dim)?;
    if !a.is_centered() {
        return Err(Error::KernelValidation(
            "symmetry: kernel is shifted off the origin".into(),
        ));
    }
    Ok(())
}

/// Upper bound on `G₀(y)` for `|y| >= r`.
fn far_bound(a: &JumpKernel, field: &GreenField, r: f64) -> f64 {
    let d = a.dim();
    match a.family() {
        KernelFamily::Gaussian { variance: b } => {
            // unimodal terms in k: Σ_k g(k) <= ∫_0^∞ g + max_k g
            let h = d as f64 / 2.0;
            let peak = (2.0 * std::f64::consts::PI * r * r / d as f64).powf(-h) * (-h).exp();
            heat_tail(d, b, r, 1e-300) + peak
        }
        KernelFamily::ExponentialTail { .. } => {
            // twice the largest value on the outer shell of the field
            let lattice = field.lattice();
            let n = lattice.points;
            let mut ix = vec![0; d];
            let shell = field
                .values()
                .iter()
                .enumerate()
                .filter(|&(i, _)| {
                    lattice.unflatten(i, &mut ix);
                    ix.iter().any(|&j| j == 0 || j == n - 1)
                })
                .fold(0.0f64, |m, (_, v)| m.max(*v));
            2.0 * shell.max(newtonian(d, a.coordinate_variance(), r))
        }
    }
}

/// `f(x) + ∫ f(x+y) G₀(y) dy`, the integral by the rectangle rule on the
/// field's lattice. The quadrature error is estimated against the
/// sub-lattice of twice the spacing.
pub fn cpp_expectation(
    f: &TestFunction,
    x: &[f64],
    a: &JumpKernel,
    field: &GreenField,
) -> Result<CppExpectation> {
    check_inputs(f, x, a, field)?;
    let w = node_weights(f, x, field);
    let lattice = field.lattice();
    let g = field.values();
    let fine = w.h_d * chunked_sum(g.len(), |i| w.f[i] * g[i]);

    let half = lattice.points / 2;
    let d = lattice.dim;
    let coarse = w.h_d
        * (1u32 << d) as f64
        * chunked_sum(g.len(), |i| {
            let mut ix = vec![0; d];
            lattice.unflatten(i, &mut ix);
            if ix.iter().all(|&j| (j + half) % 2 == 0) {
                w.f[i] * g[i]
            } else {
                0.0
            }
        });
    let quadrature_error = (fine - coarse).abs();

    let norms = f.cl_norm()?;
    let radius = lattice.extent / 2.0 - lattice.spacing();
    let tail_bound = far_bound(a, field, radius) * f.mass_outside_ball(x, radius)?.abs();
    let field_error = field.error_estimate() * norms.l1_norm;

    let value = f.value(x) + fine;
    let scale = value.abs().max(1e-300);
    Ok(CppExpectation {
        value,
        error: quadrature_error + field_error + tail_bound,
        lattice_integral: fine,
        quadrature_error,
        tail_bound,
        flagged: tail_bound > 1e-4 * scale,
    })
}

/// Variance of `∫_0^∞ f(x + X(t)) dt`.
///
/// The double integral is sampled on the lattice: `y` with weight
/// `|f(x+y)| G₀(y)`, `w` independently with weight `|f(x+w)|`, and the
/// estimator averages `G₀(w - y)`. Differences that leave the lattice fall
/// back on the Newtonian far field.
pub fn cpp_variance(
    f: &TestFunction,
    x: &[f64],
    a: &JumpKernel,
    field: &GreenField,
    budget: McBudget,
) -> Result<CppVariance> {
    check_inputs(f, x, a, field)?;
    if budget.samples < 2 {
        return Err(invalid("samples", "need at least two samples"));
    }
    let w = node_weights(f, x, field);
    let g = field.values();
    let lattice = field.lattice();
    let d = lattice.dim;
    let fx = f.value(x);

    let single = w.h_d * chunked_sum(g.len(), |i| w.f[i] * g[i]);
    let squared = w.h_d * chunked_sum(g.len(), |i| w.f[i] * w.f[i] * g[i]);
    let mass_y = w.h_d * chunked_sum(g.len(), |i| w.f[i].abs() * g[i]);
    let mass_w = w.h_d * chunked_sum(g.len(), |i| w.f[i].abs());

    if mass_y == 0.0 || mass_w == 0.0 {
        let zero = Estimate {
            value: 0.0,
            error: 0.0,
        };
        let atom_only = 2.0 * fx * fx - fx * fx;
        return Ok(CppVariance {
            verbatim: zero,
            with_atom: Estimate {
                value: atom_only,
                error: 0.0,
            },
            double: zero,
            single: 0.0,
            samples: 0,
        });
    }

    let y_dist =
        WeightedAliasIndex::new(g.iter().zip(&w.f).map(|(gv, fv)| fv.abs() * gv).collect())
            .map_err(|e| Error::InsufficientData(format!("sampling weights: {e}")))?;
    let w_dist = WeightedAliasIndex::new(w.f.iter().map(|v| v.abs()).collect())
        .map_err(|e| Error::InsufficientData(format!("sampling weights: {e}")))?;
    let sigma2 = a.coordinate_variance();
    let h = lattice.spacing();
    let stats = parallel_moments(budget.samples, budget.seed, Domain::Quadrature, 0, |rng| {
        let i = y_dist.sample(rng);
        let j = w_dist.sample(rng);
        let sign = w.f[i].signum() * w.f[j].signum();
        let mut yi = [0usize; 8];
        let mut wj = [0usize; 8];
        lattice.unflatten(i, &mut yi[..d]);
        lattice.unflatten(j, &mut wj[..d]);
        let mut off = [0i64; 8];
        for k in 0..d {
            off[k] = wj[k] as i64 - yi[k] as i64;
        }
        let gz = field.at_offset(&off[..d]).unwrap_or_else(|| {
            let r = off[..d]
                .iter()
                .map(|&o| (o as f64 * h).powi(2))
                .sum::<f64>()
                .sqrt();
            newtonian(d, sigma2, r)
        });
        sign * gz
    });
    let scale = mass_y * mass_w;
    let double = Estimate {
        value: scale * stats.mean,
        error: scale * stats.std_error(),
    };

    // field error enters each G₀ factor
    let rel_field = field.error_estimate() / field.origin_value().max(1e-300);
    let double_err = double.error + 2.0 * rel_field * double.value.abs();
    let single_err = rel_field * single.abs();

    let verbatim = 2.0 * double.value - single * single;
    let verbatim_err = 2.0 * double_err + 2.0 * single.abs() * single_err;
    let total = fx + single;
    let with_atom = 2.0 * (fx * fx + fx * single + squared + double.value) - total * total;
    let with_atom_err = 2.0
        * (double_err + (fx.abs() + squared.abs() / single.abs().max(1e-300)) * single_err)
        + 2.0 * total.abs() * single_err;
    Ok(CppVariance {
        verbatim: Estimate {
            value: verbatim,
            error: verbatim_err,
        },
        with_atom: Estimate {
            value: with_atom,
            error: with_atom_err,
        },
        double,
        single,
        samples: budget.samples,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cpp::g0_spectral;
    use crate::lattice::LatticeSpec;
    use std::f64::consts::PI;
    use std::sync::OnceLock;

    const ZETA_3_2: f64 = 2.612_375_348_685_488;

    fn setup() -> &'static (JumpKernel, GreenField) {
        static CELL: OnceLock<(JumpKernel, GreenField)> = OnceLock::new();
        CELL.get_or_init(|| {
            let a = JumpKernel::gaussian(3, 1.0).unwrap();
            let field = g0_spectral(&a, &LatticeSpec::new(3, 16.0, 64).unwrap()).unwrap();
            (a, field)
        })
    }

    #[test]
    fn kernel_density_gives_zeta() {
        let (a, field) = setup();
        let f = TestFunction::gaussian_density(3, 1.0).unwrap();
        let e = cpp_expectation(&f, &[0.0; 3], a, field).unwrap();
        let oracle = (2.0 * PI).powf(-1.5) * ZETA_3_2;
        assert!((e.value - oracle).abs() < 1e-6, "{} vs {oracle}", e.value);
        assert!((e.value - oracle).abs() <= e.error.max(1e-9));
        assert!(!e.flagged);
    }

    #[test]
    fn zero_function() {
        let (a, field) = setup();
        let f = TestFunction::zero(3);
        let e = cpp_expectation(&f, &[0.0; 3], a, field).unwrap();
        assert_eq!(e.value, 0.0);
        let v = cpp_variance(&f, &[0.0; 3], a, field, McBudget::default()).unwrap();
        assert_eq!(v.verbatim.value, 0.0);
        assert_eq!(v.with_atom.value, 0.0);
    }

    #[test]
    fn expectation_is_linear() {
        let (a, field) = setup();
        let f1 = TestFunction::gaussian(3, 1.0, 1.0).unwrap();
        let f2 = TestFunction::bump(3, 1.5, 2.0)
            .unwrap()
            .translated(&[1.0, 0.0, -0.5])
            .unwrap();
        let mix = TestFunction::mixture(3, vec![(0.3, f1.clone()), (1.7, f2.clone())]).unwrap();
        let x = [0.2, 0.1, 0.0];
        let e1 = cpp_expectation(&f1, &x, a, field).unwrap().value;
        let e2 = cpp_expectation(&f2, &x, a, field).unwrap().value;
        let em = cpp_expectation(&mix, &x, a, field).unwrap().value;
        assert!((em - (0.3 * e1 + 1.7 * e2)).abs() < 1e-12 * em);
    }

    #[test]
    fn wide_function_is_flagged() {
        let (a, field) = setup();
        let f = TestFunction::gaussian(3, 1.0, 6.0).unwrap();
        let e = cpp_expectation(&f, &[0.0; 3], a, field).unwrap();
        assert!(e.flagged, "{e:?}");
    }

    #[test]
    fn variance_reproduces_across_seeds() {
        let (a, field) = setup();
        let f = TestFunction::gaussian(3, 1.0, 1.0).unwrap();
        let v1 = cpp_variance(
            &f,
            &[0.0; 3],
            a,
            field,
            McBudget {
                samples: 400_000,
                seed: 1,
            },
        )
        .unwrap();
        let v2 = cpp_variance(
            &f,
            &[0.0; 3],
            a,
            field,
            McBudget {
                samples: 400_000,
                seed: 2,
            },
        )
        .unwrap();
        let se = (v1.double.error.powi(2) + v2.double.error.powi(2)).sqrt() * 2.0;
        assert!((v1.verbatim.value - v2.verbatim.value).abs() <= 3.0 * se);
        assert!(v1.with_atom.value > v1.verbatim.value);
        let again = cpp_variance(
            &f,
            &[0.0; 3],
            a,
            field,
            McBudget {
                samples: 400_000,
                seed: 1,
            },
        )
        .unwrap();
        assert_eq!(v1, again);
    }

    #[test]
    fn point_mass_limit_has_unit_holding_variance() {
        // a very narrow f sees only the first holding time: Var = f(x)²·Var(Exp(1))
        let (a, field) = setup();
        let f = TestFunction::gaussian(3, 1.0, 0.01).unwrap();
        let v = cpp_variance(&f, &[0.0; 3], a, field, McBudget::default()).unwrap();
        assert!((v.with_atom.value - 1.0).abs() < 0.01, "{v:?}");
    }
}
