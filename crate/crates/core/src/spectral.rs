//! Fourier transforms and spectral operators on periodic grids.
//!
//! Coefficients follow the physical convention `f(x) = Σ_k f̂_k e^{i k·x}` with
//! `x` the true node coordinate (nodes start at `-L`), so `cos(k₁x)` has
//! `f̂_{±k₁} = 1/2`. Every derivative-type multiplier (gradient, divergence,
//! Laplacian, `T`, `T*`) vanishes on modes that touch the Nyquist index.

use std::sync::Arc;

use num_complex::Complex64;
use rustfft::{Fft, FftPlanner};

use crate::field::{ScalarField, VectorField};
use crate::grid::Grid;

const I: Complex64 = Complex64 { re: 0.0, im: 1.0 };

/// Spectral coefficients of a real field, in FFT index order.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum {
    grid: Grid,
    coeffs: Vec<Complex64>,
}

impl Spectrum {
    pub fn zeros(grid: Grid) -> Self {
        Spectrum {
            grid,
            coeffs: vec![Complex64::new(0.0, 0.0); grid.len()],
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn coeffs(&self) -> &[Complex64] {
        &self.coeffs
    }

    pub fn coeffs_mut(&mut self) -> &mut [Complex64] {
        &mut self.coeffs
    }

    /// Flat index of the mode with signed numbers `(nx, ny)` (`ny` ignored in 1D).
    pub fn index_of(&self, nx: i64, ny: i64) -> usize {
        let j = self.grid.points() as i64;
        let wrap = |n: i64| n.rem_euclid(j) as usize;
        match self.grid.dim() {
            1 => wrap(nx),
            _ => wrap(nx) * j as usize + wrap(ny),
        }
    }

    pub fn mode(&self, nx: i64, ny: i64) -> Complex64 {
        self.coeffs[self.index_of(nx, ny)]
    }

    pub fn add_scaled(&mut self, c: f64, other: &Spectrum) {
        for (a, b) in self.coeffs.iter_mut().zip(&other.coeffs) {
            *a += b * c;
        }
    }
}

/// FFT plans and per-mode tables for one grid.
///
/// Cheap to share between threads; all methods take `&self`.
pub struct Spectral {
    grid: Grid,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    phase: Vec<f64>,
    k: [Vec<f64>; 2],
    k2: Vec<f64>,
    nyquist: Vec<bool>,
    dealias_keep: Vec<bool>,
}

impl std::fmt::Debug for Spectral {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: Grid) -> Self {
        let j = grid.points();
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(j);
        let inv = planner.plan_fft_inverse(j);
        let n = grid.len();
        let cutoff = (j / 3) as i64;
        let mut phase = Vec::with_capacity(n);
        let mut kx = Vec::with_capacity(n);
        let mut ky = Vec::with_capacity(n);
        let mut k2 = Vec::with_capacity(n);
        let mut nyquist = Vec::with_capacity(n);
        let mut keep = Vec::with_capacity(n);
        for flat in 0..n {
            let (ix, iy) = match grid.dim() {
                1 => (flat, None),
                _ => (flat / j, Some(flat % j)),
            };
            let nx = grid.mode_number(ix);
            let ny = iy.map(|i| grid.mode_number(i)).unwrap_or(0);
            let x = grid.wavenumber(ix);
            let y = iy.map(|i| grid.wavenumber(i)).unwrap_or(0.0);
            phase.push(if (nx + ny).rem_euclid(2) == 0 { 1.0 } else { -1.0 });
            kx.push(x);
            ky.push(y);
            k2.push(x * x + y * y);
            nyquist.push(grid.is_nyquist(ix) || iy.is_some_and(|i| grid.is_nyquist(i)));
            keep.push(nx.abs() <= cutoff && ny.abs() <= cutoff);
        }
        Spectral {
            grid,
            fwd,
            inv,
            phase,
            k: [kx, ky],
            k2,
            nyquist,
            dealias_keep: keep,
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    /// `|k|^2` per flat mode.
    pub fn wavenumber_sq(&self) -> &[f64] {
        &self.k2
    }

    /// Wavenumber component along `axis` per flat mode.
    pub fn wavenumbers(&self, axis: usize) -> &[f64] {
        &self.k[axis]
    }

    pub fn is_nyquist_mode(&self, flat: usize) -> bool {
        self.nyquist[flat]
    }

    fn fft_in_place(&self, buf: &mut [Complex64], forward: bool) {
        let plan = if forward { &self.fwd } else { &self.inv };
        let j = self.grid.points();
        match self.grid.dim() {
            1 => plan.process(buf),
            _ => {
                // rows (y axis), then columns via transpose
                plan.process(buf);
                transpose_square(buf, j);
                plan.process(buf);
                transpose_square(buf, j);
            }
        }
    }

    pub fn forward(&self, f: &ScalarField) -> Spectrum {
        debug_assert_eq!(*f.grid(), self.grid);
        let mut buf: Vec<Complex64> = f.values().iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fft_in_place(&mut buf, true);
        let norm = 1.0 / self.grid.len() as f64;
        for (c, p) in buf.iter_mut().zip(&self.phase) {
            *c *= p * norm;
        }
        Spectrum {
            grid: self.grid,
            coeffs: buf,
        }
    }

    /// Inverse transform, also returning the largest discarded imaginary part.
    pub fn inverse_with_residue(&self, s: &Spectrum) -> (ScalarField, f64) {
        let mut buf: Vec<Complex64> = s.coeffs.iter().zip(&self.phase).map(|(c, p)| c * p).collect();
        self.fft_in_place(&mut buf, false);
        let mut residue = 0.0_f64;
        let values = buf
            .iter()
            .map(|c| {
                residue = residue.max(c.im.abs());
                c.re
            })
            .collect();
        (ScalarField::from_values(self.grid, values), residue)
    }

    pub fn inverse(&self, s: &Spectrum) -> ScalarField {
        self.inverse_with_residue(s).0
    }

    fn multiplied(&self, s: &Spectrum, m: impl Fn(usize) -> Complex64) -> Spectrum {
        Spectrum {
            grid: self.grid,
            coeffs: s
                .coeffs
                .iter()
                .enumerate()
                .map(|(i, c)| {
                    if self.nyquist[i] {
                        Complex64::new(0.0, 0.0)
                    } else {
                        c * m(i)
                    }
                })
                .collect(),
        }
    }

    /// `∂/∂x_axis` in coefficient space.
    pub fn derivative_spectrum(&self, s: &Spectrum, axis: usize) -> Spectrum {
        let k = &self.k[axis];
        self.multiplied(s, |i| I * k[i])
    }

    pub fn laplacian_spectrum(&self, s: &Spectrum) -> Spectrum {
        self.multiplied(s, |i| Complex64::new(-self.k2[i], 0.0))
    }

    /// `Σ_a ∂_a w_a` from the component spectra.
    pub fn divergence_spectrum(&self, w: &[Spectrum]) -> Spectrum {
        let mut out = Spectrum::zeros(self.grid);
        for (axis, wa) in w.iter().enumerate() {
            let k = &self.k[axis];
            for (i, (o, c)) in out.coeffs.iter_mut().zip(&wa.coeffs).enumerate() {
                if !self.nyquist[i] {
                    *o += I * k[i] * c;
                }
            }
        }
        out
    }

    /// Per-mode multiplier of `T` for component `axis`.
    fn velocity_multiplier(&self, i: usize, axis: usize) -> Complex64 {
        if self.nyquist[i] || self.k2[i] == 0.0 {
            return Complex64::new(0.0, 0.0);
        }
        match self.grid.dim() {
            1 => I / self.k[0][i],
            _ => {
                let (kx, ky) = (self.k[0][i], self.k[1][i]);
                let inv = 1.0 / self.k2[i];
                if axis == 0 {
                    I * (ky * inv)
                } else {
                    I * (-kx * inv)
                }
            }
        }
    }

    /// Component spectra of `T q`.
    pub fn velocity_spectrum(&self, q: &Spectrum) -> Vec<Spectrum> {
        (0..self.grid.dim())
            .map(|axis| Spectrum {
                grid: self.grid,
                coeffs: q
                    .coeffs
                    .iter()
                    .enumerate()
                    .map(|(i, c)| c * self.velocity_multiplier(i, axis))
                    .collect(),
            })
            .collect()
    }

    /// Spectrum of `T* w`, the exact discrete L2 adjoint of `T`.
    pub fn adjoint_velocity_spectrum(&self, w: &[Spectrum]) -> Spectrum {
        let mut out = Spectrum::zeros(self.grid);
        for (axis, wa) in w.iter().enumerate() {
            for (i, (o, c)) in out.coeffs.iter_mut().zip(&wa.coeffs).enumerate() {
                *o += self.velocity_multiplier(i, axis).conj() * c;
            }
        }
        out
    }

    pub fn gradient(&self, f: &ScalarField) -> VectorField {
        let s = self.forward(f);
        VectorField::from_components(
            (0..self.grid.dim())
                .map(|a| self.inverse(&self.derivative_spectrum(&s, a)))
                .collect(),
        )
    }

    pub fn divergence(&self, w: &VectorField) -> ScalarField {
        let spectra: Vec<Spectrum> = w.components().iter().map(|c| self.forward(c)).collect();
        self.inverse(&self.divergence_spectrum(&spectra))
    }

    pub fn laplacian(&self, f: &ScalarField) -> ScalarField {
        self.inverse(&self.laplacian_spectrum(&self.forward(f)))
    }

    /// Vorticity-to-velocity map `u = T q`.
    ///
    /// 1D: `û_k = i k⁻¹ q̂_k`; 2D: `û_k = i |k|⁻² (k_y, -k_x) q̂_k`; the mean of
    /// `q` does not contribute.
    pub fn velocity(&self, q: &ScalarField) -> VectorField {
        let s = self.forward(q);
        VectorField::from_components(self.velocity_spectrum(&s).iter().map(|c| self.inverse(c)).collect())
    }

    pub fn adjoint_velocity(&self, w: &VectorField) -> ScalarField {
        let spectra: Vec<Spectrum> = w.components().iter().map(|c| self.forward(c)).collect();
        self.inverse(&self.adjoint_velocity_spectrum(&spectra))
    }

    /// Two-thirds rule: drop modes with `|n| > J/3` on any axis.
    pub fn dealias_spectrum(&self, s: &mut Spectrum) {
        for (c, keep) in s.coeffs.iter_mut().zip(&self.dealias_keep) {
            if !keep {
                *c = Complex64::new(0.0, 0.0);
            }
        }
    }

    pub fn dealias(&self, f: &ScalarField) -> ScalarField {
        let mut s = self.forward(f);
        self.dealias_spectrum(&mut s);
        self.inverse(&s)
    }

    /// Periodic convolution with a centred Gaussian of standard deviation `std`.
    pub fn gaussian_smooth(&self, f: &ScalarField, std: f64) -> ScalarField {
        let mut s = self.forward(f);
        let a = 0.5 * std * std;
        for (c, k2) in s.coeffs.iter_mut().zip(&self.k2) {
            *c *= (-a * k2).exp();
        }
        self.inverse(&s)
    }

    /// Divide every mode by `1 + scale |k|^2` (implicit diffusion solve).
    pub fn solve_helmholtz_in_place(&self, s: &mut Spectrum, scale: f64) {
        for (i, c) in s.coeffs.iter_mut().enumerate() {
            if !self.nyquist[i] {
                *c /= 1.0 + scale * self.k2[i];
            }
        }
    }

    /// Dealiased spectrum of `∇·(v f)`.
    pub fn flux_divergence(&self, v: &VectorField, f: &ScalarField) -> Spectrum {
        let spectra: Vec<Spectrum> = v
            .components()
            .iter()
            .map(|c| {
                let mut s = self.forward(&c.mul(f));
                self.dealias_spectrum(&mut s);
                s
            })
            .collect();
        self.divergence_spectrum(&spectra)
    }

    /// Gradient returned together with the spectrum of its argument.
    pub fn gradient_from_spectrum(&self, s: &Spectrum) -> VectorField {
        VectorField::from_components(
            (0..self.grid.dim())
                .map(|a| self.inverse(&self.derivative_spectrum(s, a)))
                .collect(),
        )
    }
}

fn transpose_square(buf: &mut [Complex64], n: usize) {
    for r in 0..n {
        for c in (r + 1)..n {
            buf.swap(r * n + c, c * n + r);
        }
    }
}
