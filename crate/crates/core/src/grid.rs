use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};

/// Uniform periodic grid on `[-L, L)^dim` with `J` points per axis.
///
/// Nodes sit at `x_j = -L + j h`, `h = 2L / J`; the right endpoint is the
/// periodic image of the left one. Two-dimensional data is stored row-major
/// with the x index varying slowest (`flat = ix * J + iy`).
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Grid {
    dim: usize,
    half_width: f64,
    points: usize,
}

impl Grid {
    pub fn new(dim: usize, half_width: f64, points: usize) -> Result<Self> {
        if dim != 1 && dim != 2 {
            return Err(MfgError::config(format!("grid dimension must be 1 or 2, got {dim}")));
        }
        if !(half_width.is_finite() && half_width > 0.0) {
            return Err(MfgError::config(format!(
                "grid half-width must be positive, got {half_width}"
            )));
        }
        if points < 8 || !points.is_multiple_of(2) {
            return Err(MfgError::config(format!(
                "points per axis must be even and >= 8, got {points}"
            )));
        }
        Ok(Grid {
            dim,
            half_width,
            points,
        })
    }

    pub fn line(half_width: f64, points: usize) -> Result<Self> {
        Self::new(1, half_width, points)
    }

    pub fn plane(half_width: f64, points: usize) -> Result<Self> {
        Self::new(2, half_width, points)
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn half_width(&self) -> f64 {
        self.half_width
    }

    pub fn points(&self) -> usize {
        self.points
    }

    pub fn spacing(&self) -> f64 {
        2.0 * self.half_width / self.points as f64
    }

    /// Total number of nodes, `J^dim`.
    pub fn len(&self) -> usize {
        self.points.pow(self.dim as u32)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    /// Quadrature weight of one node, `h^dim`.
    pub fn cell_volume(&self) -> f64 {
        self.spacing().powi(self.dim as i32)
    }

    pub fn domain_volume(&self) -> f64 {
        (2.0 * self.half_width).powi(self.dim as i32)
    }

    pub fn node(&self, j: usize) -> f64 {
        -self.half_width + j as f64 * self.spacing()
    }

    /// Physical coordinates of a flat node index (unused axes are 0).
    pub fn coords(&self, flat: usize) -> [f64; 2] {
        match self.dim {
            1 => [self.node(flat), 0.0],
            _ => [self.node(flat / self.points), self.node(flat % self.points)],
        }
    }

    /// Signed mode number `n` of an FFT-ordered axis index.
    pub fn mode_number(&self, idx: usize) -> i64 {
        let j = self.points as i64;
        let i = idx as i64;
        if i < j / 2 {
            i
        } else {
            i - j
        }
    }

    /// Wavenumber `k = pi n / L` of an FFT-ordered axis index.
    pub fn wavenumber(&self, idx: usize) -> f64 {
        PI * self.mode_number(idx) as f64 / self.half_width
    }

    pub fn is_nyquist(&self, idx: usize) -> bool {
        idx == self.points / 2
    }

    /// Fold a coordinate back into `[-L, L)`.
    pub fn wrap(&self, x: f64) -> f64 {
        if (-self.half_width..self.half_width).contains(&x) {
            return x;
        }
        let period = 2.0 * self.half_width;
        let y = (x + self.half_width).rem_euclid(period) - self.half_width;
        // rem_euclid can round up to exactly `period`
        if y >= self.half_width {
            -self.half_width
        } else {
            y
        }
    }

    /// Shortest signed displacement `x - a` on the circle of period `2L`.
    pub fn periodic_offset(&self, x: f64, a: f64) -> f64 {
        let period = 2.0 * self.half_width;
        let d = (x - a).rem_euclid(period);
        if d > self.half_width {
            d - period
        } else {
            d
        }
    }
}
