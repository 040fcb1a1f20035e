use crate::grid::Grid;

/// Real scalar samples on a periodic grid (physical view).
///
/// The spectral view lives in [`crate::spectral::Spectrum`]; conversions go
/// through [`crate::spectral::Spectral`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField {
    grid: Grid,
    values: Vec<f64>,
}

impl ScalarField {
    pub fn zeros(grid: Grid) -> Self {
        Self::constant(grid, 0.0)
    }

    pub fn constant(grid: Grid, c: f64) -> Self {
        ScalarField {
            grid,
            values: vec![c; grid.len()],
        }
    }

    /// Sample `f(x, y)` at every node (`y = 0` in 1D).
    pub fn from_fn(grid: Grid, mut f: impl FnMut(f64, f64) -> f64) -> Self {
        let values = (0..grid.len())
            .map(|i| {
                let [x, y] = grid.coords(i);
                f(x, y)
            })
            .collect();
        ScalarField { grid, values }
    }

    pub fn from_values(grid: Grid, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len(), "value count does not match grid");
        ScalarField { grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `∫ f dx` by the periodic rectangle rule.
    pub fn integral(&self) -> f64 {
        self.values.iter().sum::<f64>() * self.grid.cell_volume()
    }

    pub fn mass(&self) -> f64 {
        self.integral()
    }

    pub fn mean(&self) -> f64 {
        self.values.iter().sum::<f64>() / self.values.len() as f64
    }

    /// `∫ f g dx`.
    pub fn dot(&self, other: &ScalarField) -> f64 {
        self.values.iter().zip(&other.values).map(|(a, b)| a * b).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn l2_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn l1_norm(&self) -> f64 {
        self.values.iter().map(|v| v.abs()).sum::<f64>() * self.grid.cell_volume()
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> ScalarField {
        ScalarField {
            grid: self.grid,
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn zip_map(&self, other: &ScalarField, f: impl Fn(f64, f64) -> f64) -> ScalarField {
        debug_assert_eq!(self.grid, other.grid);
        ScalarField {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn add(&self, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a - b)
    }

    pub fn mul(&self, other: &ScalarField) -> ScalarField {
        self.zip_map(other, |a, b| a * b)
    }

    pub fn scale(&self, c: f64) -> ScalarField {
        self.map(|v| c * v)
    }

    /// `self += c * other`.
    pub fn axpy(&mut self, c: f64, other: &ScalarField) {
        for (a, b) in self.values.iter_mut().zip(&other.values) {
            *a += c * b;
        }
    }

    /// Shift by whole grid cells along the x axis (periodic).
    pub fn roll_x(&self, cells: usize) -> ScalarField {
        let j = self.grid.points();
        let mut out = self.values.clone();
        match self.grid.dim() {
            1 => out.rotate_right(cells % j),
            _ => {
                for ix in 0..j {
                    let dst = (ix + cells) % j;
                    out[dst * j..(dst + 1) * j].copy_from_slice(&self.values[ix * j..(ix + 1) * j]);
                }
            }
        }
        ScalarField {
            grid: self.grid,
            values: out,
        }
    }
}

/// `dim`-component field on a shared grid (velocities, controls).
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField {
    grid: Grid,
    components: Vec<ScalarField>,
}

impl VectorField {
    pub fn zeros(grid: Grid) -> Self {
        VectorField {
            grid,
            components: (0..grid.dim()).map(|_| ScalarField::zeros(grid)).collect(),
        }
    }

    pub fn constant(grid: Grid, c: &[f64]) -> Self {
        assert_eq!(c.len(), grid.dim());
        VectorField {
            grid,
            components: c.iter().map(|&v| ScalarField::constant(grid, v)).collect(),
        }
    }

    pub fn from_components(components: Vec<ScalarField>) -> Self {
        let grid = *components[0].grid();
        assert_eq!(
            components.len(),
            grid.dim(),
            "component count must equal grid dimension"
        );
        assert!(
            components.iter().all(|c| *c.grid() == grid),
            "components must share one grid"
        );
        VectorField { grid, components }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn components(&self) -> &[ScalarField] {
        &self.components
    }

    pub fn component(&self, a: usize) -> &ScalarField {
        &self.components[a]
    }

    pub fn components_mut(&mut self) -> &mut [ScalarField] {
        &mut self.components
    }

    pub fn into_components(self) -> Vec<ScalarField> {
        self.components
    }

    pub fn add(&self, other: &VectorField) -> VectorField {
        VectorField {
            grid: self.grid,
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.add(b))
                .collect(),
        }
    }

    pub fn sub(&self, other: &VectorField) -> VectorField {
        VectorField {
            grid: self.grid,
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.sub(b))
                .collect(),
        }
    }

    pub fn scale(&self, c: f64) -> VectorField {
        VectorField {
            grid: self.grid,
            components: self.components.iter().map(|a| a.scale(c)).collect(),
        }
    }

    /// Multiply every component by a scalar field.
    pub fn times(&self, s: &ScalarField) -> VectorField {
        VectorField {
            grid: self.grid,
            components: self.components.iter().map(|a| a.mul(s)).collect(),
        }
    }

    /// Pointwise `|v|^2`.
    pub fn norm_sq(&self) -> ScalarField {
        let mut out = ScalarField::zeros(self.grid);
        for c in &self.components {
            for (o, v) in out.values_mut().iter_mut().zip(c.values()) {
                *o += v * v;
            }
        }
        out
    }

    /// Pointwise dot product.
    pub fn dot_field(&self, other: &VectorField) -> ScalarField {
        let mut out = ScalarField::zeros(self.grid);
        for (a, b) in self.components.iter().zip(&other.components) {
            for ((o, x), y) in out.values_mut().iter_mut().zip(a.values()).zip(b.values()) {
                *o += x * y;
            }
        }
        out
    }

    /// `∫ v · w dx`.
    pub fn dot(&self, other: &VectorField) -> f64 {
        self.components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.dot(b))
            .sum()
    }

    pub fn l2_norm(&self) -> f64 {
        self.dot(self).sqrt()
    }

    pub fn max_abs(&self) -> f64 {
        self.norm_sq().max().sqrt()
    }

    pub fn is_finite(&self) -> bool {
        self.components.iter().all(|c| c.is_finite())
    }

    pub fn roll_x(&self, cells: usize) -> VectorField {
        VectorField {
            grid: self.grid,
            components: self.components.iter().map(|c| c.roll_x(cells)).collect(),
        }
    }
}

/// Fields that can be blended linearly (used for time interpolation and
/// convex combinations of trajectories).
pub trait Field: Clone + Send + Sync {
    fn grid(&self) -> &Grid;
    /// `(1 - w) * self + w * other`.
    fn lerp(&self, other: &Self, w: f64) -> Self;
    /// Squared L2 norm `∫ |f|^2 dx`.
    fn norm_sq_integral(&self) -> f64;
    /// Squared L2 distance to `other`.
    fn dist_sq(&self, other: &Self) -> f64;
    fn all_finite(&self) -> bool;
}

impl Field for ScalarField {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn lerp(&self, other: &Self, w: f64) -> Self {
        self.zip_map(other, |a, b| (1.0 - w) * a + w * b)
    }

    fn norm_sq_integral(&self) -> f64 {
        self.dot(self)
    }

    fn dist_sq(&self, other: &Self) -> f64 {
        self.values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            * self.grid.cell_volume()
    }

    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}

impl Field for VectorField {
    fn grid(&self) -> &Grid {
        &self.grid
    }

    fn lerp(&self, other: &Self, w: f64) -> Self {
        VectorField {
            grid: self.grid,
            components: self
                .components
                .iter()
                .zip(&other.components)
                .map(|(a, b)| a.lerp(b, w))
                .collect(),
        }
    }

    fn norm_sq_integral(&self) -> f64 {
        self.dot(self)
    }

    fn dist_sq(&self, other: &Self) -> f64 {
        self.components
            .iter()
            .zip(&other.components)
            .map(|(a, b)| a.dist_sq(b))
            .sum()
    }

    fn all_finite(&self) -> bool {
        self.is_finite()
    }
}
