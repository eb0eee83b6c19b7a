//! Special functions and geometric constants shared by the analytic modules.

use std::f64::consts::PI;

pub use statrs::function::erf::erf;
pub use statrs::function::gamma::{gamma, ln_gamma};

/// Surface measure of the unit sphere in `d` dimensions, `2 π^{d/2} / Γ(d/2)`.
pub fn sphere_area(d: usize) -> f64 {
    let h = d as f64 / 2.0;
    2.0 * PI.powf(h) / gamma(h)
}

/// Volume of the unit ball in `d` dimensions.
pub fn ball_volume(d: usize) -> f64 {
    sphere_area(d) / d as f64
}

/// Lower incomplete gamma function `γ(s, z) = ∫_0^z u^{s-1} e^{-u} du`.
pub fn lower_gamma(s: f64, z: f64) -> f64 {
    if z <= 0.0 {
        return 0.0;
    }
    if z < 1.0 {
        z.powf(s) * lower_gamma_series(s, z)
    } else {
        gamma(s) * statrs::function::gamma::gamma_lr(s, z)
    }
}

/// `z^{-s} γ(s, z)` by its power series; accurate for small `z`.
fn lower_gamma_series(s: f64, z: f64) -> f64 {
    let mut term = 1.0;
    let mut sum = 1.0 / s;
    for n in 1..200 {
        term *= -z / n as f64;
        let add = term / (s + n as f64);
        sum += add;
        if add.abs() < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

/// `∫_{t0}^∞ (2π v t)^{-d/2} exp(-r²/(2 v t)) dt` for `d >= 3`.
///
/// This is the tail of the time integral of a Gaussian heat kernel with
/// variance `v t` per coordinate.
pub fn heat_tail(d: usize, v: f64, r: f64, t0: f64) -> f64 {
    debug_assert!(d >= 3 && v > 0.0 && t0 > 0.0);
    let s = d as f64 / 2.0 - 1.0;
    let prefactor = (2.0 * PI * v).powf(-(d as f64) / 2.0);
    let a = r * r / (2.0 * v);
    let z = a / t0;
    if z < 1.0 {
        // a^{-s} γ(s, z) = t0^{-s} z^{-s} γ(s, z)
        prefactor * t0.powf(-s) * lower_gamma_series(s, z)
    } else {
        prefactor * a.powf(-s) * lower_gamma(s, z)
    }
}

/// Two-sided standard normal quantile for 99% coverage.
pub const Z_99: f64 = 2.575_829_303_548_900_4;

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gamma_at_half_integers() {
        // Γ(n + 1/2) = (2n)! √π / (4^n n!)
        let sqrt_pi = PI.sqrt();
        let exact = [
            (0.5, sqrt_pi),
            (1.5, sqrt_pi / 2.0),
            (2.5, 3.0 * sqrt_pi / 4.0),
            (3.5, 15.0 * sqrt_pi / 8.0),
            (4.5, 105.0 * sqrt_pi / 16.0),
        ];
        for (x, g) in exact {
            assert!((gamma(x) - g).abs() / g < 1e-13, "Γ({x})");
        }
        assert!((gamma(5.0) - 24.0).abs() < 1e-12);
    }

    #[test]
    fn sphere_areas() {
        assert!((sphere_area(3) - 4.0 * PI).abs() < 1e-13);
        assert!((sphere_area(4) - 2.0 * PI * PI).abs() < 1e-12);
        assert!((ball_volume(3) - 4.0 * PI / 3.0).abs() < 1e-13);
    }

    #[test]
    fn lower_gamma_matches_branches() {
        for &s in &[0.5, 1.0, 1.5, 2.5] {
            // continuity across the series/statrs switch at z = 1
            let below = lower_gamma(s, 1.0 - 1e-12);
            let above = lower_gamma(s, 1.0 + 1e-12);
            assert!((below - above).abs() < 1e-10);
        }
        // γ(1, z) = 1 - e^{-z}
        for &z in &[1e-6, 0.3, 2.0, 10.0] {
            assert!((lower_gamma(1.0, z) - (1.0 - (-z as f64).exp())).abs() < 1e-14);
        }
    }

    #[test]
    fn heat_tail_three_dimensions() {
        // d = 3, v = 1, r = 0: ∫_{t0}^∞ (2π t)^{-3/2} dt = (2π)^{-3/2} 2 t0^{-1/2}
        let t0: f64 = 4.0;
        let expected = (2.0 * PI).powf(-1.5) * 2.0 / t0.sqrt();
        assert!((heat_tail(3, 1.0, 0.0, t0) - expected).abs() < 1e-15);
        // from t0 -> 0 the full integral is 1/(2π r) in d = 3 (v = 1)
        let r = 1.7;
        let full = heat_tail(3, 1.0, r, 1e-12);
        assert!((full - 1.0 / (2.0 * PI * r)).abs() < 1e-12);
    }
}
