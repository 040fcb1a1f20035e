//! Modified viscous Burgers transport: `∂q + ∇·((Tq + α) q) = ν Δq`.

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::Grid;
use crate::spectral::{Spectral, Spectrum};

/// Parameters of the sech² profile `Q_{σ,a}(x) = 2νσ² sech²(σ|x − a|)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SteadyStateParams {
    pub sigma: f64,
    /// Centre; in 2D the same value is used on both axes unless `center_y` is set.
    pub center: f64,
    pub center_y: Option<f64>,
    pub nu: f64,
}

impl SteadyStateParams {
    pub fn new(sigma: f64, center: f64, nu: f64) -> Self {
        SteadyStateParams {
            sigma,
            center,
            center_y: None,
            nu,
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if !(self.sigma > 0.0) {
            return Err(MfgError::config(format!(
                "profile sigma must be positive, got {}",
                self.sigma
            )));
        }
        if !(self.nu > 0.0) {
            return Err(MfgError::config(format!("nu must be positive, got {}", self.nu)));
        }
        let l = grid.half_width();
        if self.center.abs() > l || self.center_y.is_some_and(|c| c.abs() > l) {
            return Err(MfgError::config("profile centre lies outside [-L, L]"));
        }
        Ok(())
    }

    pub fn peak(&self) -> f64 {
        2.0 * self.nu * self.sigma * self.sigma
    }
}

/// Transport model parameters (`ν` doubles as the control diffusion `D`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ModelParams {
    pub nu: f64,
    pub grid: Grid,
}

impl ModelParams {
    pub fn new(nu: f64, grid: Grid) -> Result<Self> {
        if !(nu > 0.0) {
            return Err(MfgError::config(format!("nu must be positive, got {nu}")));
        }
        Ok(ModelParams { nu, grid })
    }
}

fn sech2(z: f64) -> f64 {
    let c = z.cosh();
    if c.is_finite() {
        1.0 / (c * c)
    } else {
        0.0
    }
}

/// Sample `Q_{σ,a}` using the periodic distance to the centre (Euclidean in 2D).
pub fn steady_profile(p: &SteadyStateParams, grid: &Grid) -> ScalarField {
    let amp = p.peak();
    let ay = p.center_y.unwrap_or(p.center);
    let g = *grid;
    ScalarField::from_fn(g, |x, y| {
        let dx = g.periodic_offset(x, p.center);
        let r = if g.dim() == 1 {
            dx.abs()
        } else {
            let dy = g.periodic_offset(y, ay);
            (dx * dx + dy * dy).sqrt()
        };
        amp * sech2(p.sigma * r)
    })
}

/// Spectrum of `f = −∇·(α q)` (dealiased).
pub fn control_forcing_spectrum(sp: &Spectral, alpha: &VectorField, q: &ScalarField) -> Spectrum {
    let mut s = sp.flux_divergence(alpha, q);
    for c in s.coeffs_mut() {
        *c = -*c;
    }
    s
}

pub fn control_forcing(sp: &Spectral, alpha: &VectorField, q: &ScalarField) -> ScalarField {
    sp.inverse(&control_forcing_spectrum(sp, alpha, q))
}

/// Explicit (advective) part of the MVB right-hand side, `−∇·((Tq + α) q)`.
pub fn mvb_advection_spectrum(sp: &Spectral, q: &ScalarField, alpha: Option<&VectorField>) -> Spectrum {
    let mut drift = sp.velocity(q);
    if let Some(a) = alpha {
        drift = drift.add(a);
    }
    let mut s = sp.flux_divergence(&drift, q);
    for c in s.coeffs_mut() {
        *c = -*c;
    }
    s
}

/// Full right-hand side `−∇·((Tq + α) q) + ν Δq`.
pub fn mvb_rhs(sp: &Spectral, q: &ScalarField, alpha: &VectorField, p: &ModelParams) -> ScalarField {
    let qs = sp.forward(q);
    let mut rhs = mvb_advection_spectrum(sp, q, Some(alpha));
    rhs.add_scaled(p.nu, &sp.laplacian_spectrum(&qs));
    sp.inverse(&rhs)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn line(j: usize) -> (Grid, Spectral) {
        let g = Grid::line(10.0, j).unwrap();
        (g, Spectral::new(g))
    }

    #[test]
    fn peak_value_of_table_profile() {
        let (g, _) = line(256);
        let p = SteadyStateParams::new(1.0, 0.0, 0.5);
        let q = steady_profile(&p, &g);
        assert!((q.max() - 1.0).abs() < 1e-15);
        assert!(q.min() > 0.0);
    }

    #[test]
    fn profile_is_symmetric_about_centre() {
        let g = Grid::line(10.0, 200).unwrap();
        let p = SteadyStateParams::new(1.3, -5.0, 0.5);
        let q = steady_profile(&p, &g);
        // centre -5 is node 50; periodic mirror pairs around it
        let j = g.points();
        for r in 1..100 {
            let a = q.values()[(50 + r) % j];
            let b = q.values()[(50 + j - r) % j];
            assert!((a - b).abs() < 1e-13);
        }
    }

    /// Adaptive Simpson quadrature, independent of the grid.
    fn adaptive_simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, tol: f64) -> f64 {
        #[allow(clippy::too_many_arguments)]
        fn rec(
            f: &dyn Fn(f64) -> f64,
            a: f64,
            b: f64,
            fa: f64,
            fm: f64,
            fb: f64,
            whole: f64,
            tol: f64,
            depth: u32,
        ) -> f64 {
            let m = 0.5 * (a + b);
            let lm = 0.5 * (a + m);
            let rm = 0.5 * (m + b);
            let flm = f(lm);
            let frm = f(rm);
            let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
            let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
            if depth == 0 || (left + right - whole).abs() < 15.0 * tol {
                left + right + (left + right - whole) / 15.0
            } else {
                rec(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)
                    + rec(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)
            }
        }
        let fa = f(a);
        let fb = f(b);
        let fm = f(0.5 * (a + b));
        let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
        rec(f, a, b, fa, fm, fb, whole, tol, 40)
    }

    #[test]
    fn profile_mass_matches_closed_form_and_quadrature() {
        let (g, _) = line(256);
        let p = SteadyStateParams::new(1.0, 0.0, 0.5);
        let f = |x: f64| 2.0 * 0.5 / x.cosh().powi(2);
        let oracle = adaptive_simpson(&f, -10.0, 10.0, 1e-13);
        let closed = 2.0 * (10.0_f64).tanh();
        assert!((oracle - closed).abs() < 1e-10);
        assert!((steady_profile(&p, &g).mass() - closed).abs() < 1e-10);
    }

    #[test]
    fn two_dimensional_profile_is_radial_and_periodic() {
        let g = Grid::plane(10.0, 32).unwrap();
        let p = SteadyStateParams::new(1.0, 5.0, 0.5);
        let q = steady_profile(&p, &g);
        let j = g.points();
        // node (24, 24) is (5, 5); compare (5+r, 5) and (5, 5+r) including wrap
        for r in 1..16 {
            let a = q.values()[((24 + r) % j) * j + 24];
            let b = q.values()[24 * j + (24 + r) % j];
            assert!((a - b).abs() < 1e-15);
        }
        assert!((q.values()[24 * j + 24] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn forcing_zero_and_mean_free() {
        let (g, sp) = line(64);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let q = ScalarField::from_fn(g, |_, _| rng.gen_range(0.0..1.0));
        assert!(control_forcing(&sp, &VectorField::zeros(g), &q).max_abs() == 0.0);
        for _ in 0..20 {
            let a = VectorField::from_components(vec![ScalarField::from_fn(g, |_, _| rng.gen_range(-1.0..1.0))]);
            let f = control_forcing(&sp, &a, &q);
            assert!(f.mean().abs() < 1e-14);
        }
    }

    #[test]
    fn forcing_of_constant_drift_on_cosine() {
        let (g, sp) = line(128);
        let k1 = PI / 10.0;
        let c = 0.7;
        let q = ScalarField::from_fn(g, |x, _| (k1 * x).cos());
        let f = control_forcing(&sp, &VectorField::constant(g, &[c]), &q);
        let expected = ScalarField::from_fn(g, |x, _| c * k1 * (k1 * x).sin());
        assert!(f.sub(&expected).max_abs() < 1e-13);
    }

    #[test]
    fn rhs_of_zero_is_zero() {
        let (g, sp) = line(64);
        let p = ModelParams::new(0.5, g).unwrap();
        let r = mvb_rhs(&sp, &ScalarField::zeros(g), &VectorField::zeros(g), &p);
        assert_eq!(r.max_abs(), 0.0);
    }

    #[test]
    fn rhs_is_mean_free() {
        for g in [Grid::line(10.0, 64).unwrap(), Grid::plane(10.0, 16).unwrap()] {
            let sp = Spectral::new(g);
            let p = ModelParams::new(0.5, g).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            for _ in 0..50 {
                let q = ScalarField::from_fn(g, |_, _| rng.gen_range(0.0..2.0));
                let a = VectorField::from_components(
                    (0..g.dim())
                        .map(|_| ScalarField::from_fn(g, |_, _| rng.gen_range(-1.0..1.0)))
                        .collect(),
                );
                let r = mvb_rhs(&sp, &q, &a, &p);
                assert!(r.mean().abs() < 1e-13);
            }
        }
    }

    #[test]
    fn rhs_is_translation_equivariant() {
        for g in [Grid::line(10.0, 64).unwrap(), Grid::plane(10.0, 16).unwrap()] {
            let sp = Spectral::new(g);
            let p = ModelParams::new(0.5, g).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            let q = ScalarField::from_fn(g, |_, _| rng.gen_range(0.0..2.0));
            let a = VectorField::from_components(
                (0..g.dim())
                    .map(|_| ScalarField::from_fn(g, |_, _| rng.gen_range(-1.0..1.0)))
                    .collect(),
            );
            let shifted = mvb_rhs(&sp, &q.roll_x(1), &a.roll_x(1), &p);
            let expected = mvb_rhs(&sp, &q, &a, &p).roll_x(1);
            assert!(shifted.sub(&expected).max_abs() < 1e-12 * expected.max_abs());
        }
    }

    /// On the periodic line the zero-mode-free `T` turns `Q_{σ,a}` into
    /// `u = −2νσ tanh(σ(x−a)) + q̄ (x − a) + c`, so the tanh part of the flux
    /// cancels the diffusion exactly and the residual is `−∂x((q̄ x + c) Q)`.
    #[test]
    fn sech_profile_residual_is_the_mean_vorticity_drift() {
        let (g, sp) = line(256);
        let p = ModelParams::new(0.5, g).unwrap();
        let q = steady_profile(&SteadyStateParams::new(1.0, 0.0, 0.5), &g);
        let r = mvb_rhs(&sp, &q, &VectorField::zeros(g), &p);
        let qbar = q.mean();
        // sawtooth part of the velocity: q̄ x has zero mean on [-L, L) up to h
        let u = sp.velocity(&q);
        let tanh_part = ScalarField::from_fn(g, |x, _| -2.0 * 0.5 * x.tanh());
        let sawtooth = u.component(0).sub(&tanh_part);
        let interior: Vec<usize> = (0..256).filter(|&i| g.node(i).abs() < 6.0).collect();
        let c = sawtooth.values()[128];
        for &i in &interior {
            let x = g.node(i);
            assert!((sawtooth.values()[i] - (qbar * x + c)).abs() < 1e-6, "x = {x}");
        }
        let predicted = ScalarField::from_fn(g, |x, _| {
            let qq = x.cosh().powi(-2);
            let dq = -2.0 * x.tanh() * qq;
            -(qbar * qq + (qbar * x + c) * dq)
        });
        for &i in &interior {
            assert!((r.values()[i] - predicted.values()[i]).abs() < 1e-6);
        }
        assert!((r.max_abs() - qbar).abs() < 0.02 * qbar);
    }
}
