//! Particle ensembles: sampling from gridded densities, Euler–Maruyama
//! transport, mollified empirical densities, and the ensemble versions of both
//! control problems.
//!
//! Every particle owns a ChaCha stream keyed by `(seed, index)`, so results do
//! not depend on how the particle loop is scheduled.

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::costs::{self, CostBreakdown, CostConfig};
use crate::error::{MfgError, Result};
use crate::field::{ScalarField, VectorField};
use crate::grid::Grid;
use crate::integrate::{check_stride, TimeWindow, Trajectory};
use crate::mfg1::{self, Mfg1Sources};
use crate::mfg2::{self, Initializer, IterationConfig, Mfg2Solution, PushForward};
use crate::par;
use crate::spectral::Spectral;

/// Keeps noise streams disjoint from the sampling streams of the same seed.
const NOISE_KEY: u64 = 0x6e6f_6973_655f_6b65;

/// Default mollifier width in grid spacings.
pub const DEFAULT_BANDWIDTH_CELLS: f64 = 2.0;

fn particle_rng(seed: u64, key: u64, index: usize) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ key);
    rng.set_stream(index as u64);
    rng
}

/// `N` particles in `[−L, L)^d`, stored as `d` consecutive coordinates each.
#[derive(Clone, Debug, PartialEq)]
pub struct Ensemble {
    grid: Grid,
    positions: Vec<f64>,
    seed: u64,
    time: f64,
}

impl Ensemble {
    /// Positions are wrapped into the primary domain.
    pub fn new(grid: Grid, mut positions: Vec<f64>, seed: u64, time: f64) -> Result<Self> {
        let d = grid.dim();
        if positions.is_empty() || !positions.len().is_multiple_of(d) {
            return Err(MfgError::config(format!(
                "an ensemble needs a positive multiple of {d} coordinates, got {}",
                positions.len()
            )));
        }
        if positions.iter().any(|x| !x.is_finite()) {
            return Err(MfgError::NonFiniteState {
                time,
                context: "ensemble positions",
            });
        }
        for x in &mut positions {
            *x = grid.wrap(*x);
        }
        Ok(Ensemble {
            grid,
            positions,
            seed,
            time,
        })
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn dim(&self) -> usize {
        self.grid.dim()
    }

    pub fn len(&self) -> usize {
        self.positions.len() / self.dim()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[f64] {
        &self.positions
    }

    pub fn particle(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.positions[i * d..(i + 1) * d]
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn time(&self) -> f64 {
        self.time
    }

    fn all_finite(&self) -> bool {
        self.positions.iter().all(|x| x.is_finite())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Normalization {
    UnitMass,
    ReferenceMass(f64),
}

impl Normalization {
    pub fn mass(&self) -> f64 {
        match *self {
            Normalization::UnitMass => 1.0,
            Normalization::ReferenceMass(m) => m,
        }
    }
}

/// Mollifier for empirical densities.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct KdeConfig {
    bandwidth: f64,
    normalization: Normalization,
}

impl KdeConfig {
    /// `bandwidth` is the Gaussian standard deviation and may not be below one grid spacing.
    pub fn new(grid: &Grid, bandwidth: f64, normalization: Normalization) -> Result<Self> {
        let h = grid.spacing();
        if !(bandwidth.is_finite() && bandwidth >= h * (1.0 - 1e-12)) {
            return Err(MfgError::config(format!(
                "KDE bandwidth {bandwidth} is below the grid spacing {h}"
            )));
        }
        let m = normalization.mass();
        if !(m.is_finite() && m > 0.0) {
            return Err(MfgError::config(format!(
                "KDE reference mass must be positive, got {m}"
            )));
        }
        Ok(KdeConfig {
            bandwidth,
            normalization,
        })
    }

    /// Width `2h`, unit mass.
    pub fn default_for(grid: &Grid) -> Self {
        KdeConfig {
            bandwidth: DEFAULT_BANDWIDTH_CELLS * grid.spacing(),
            normalization: Normalization::UnitMass,
        }
    }

    pub fn bandwidth(&self) -> f64 {
        self.bandwidth
    }

    pub fn normalization(&self) -> Normalization {
        self.normalization
    }
}

/// Inverse transform for the periodic piecewise-linear density through nodal `values`.
struct LinearCdf {
    values: Vec<f64>,
    cumulative: Vec<f64>,
    h: f64,
}

impl LinearCdf {
    fn new(values: Vec<f64>, h: f64) -> Option<Self> {
        let n = values.len();
        let mut cumulative = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for j in 0..n {
            acc += 0.5 * h * (values[j] + values[(j + 1) % n]);
            cumulative.push(acc);
        }
        (acc > 0.0).then_some(LinearCdf { values, cumulative, h })
    }

    /// Offset from the first node, in `[0, n h)`, for `u ∈ [0, 1)`.
    fn sample(&self, u: f64) -> f64 {
        let n = self.values.len();
        let r = u * self.cumulative[n];
        let j = (self.cumulative.partition_point(|&c| c <= r).max(1) - 1).min(n - 1);
        let rem = r - self.cumulative[j];
        let a = self.values[j];
        let slope = (self.values[(j + 1) % n] - a) / self.h;
        // root of a t + slope t²/2 = rem, in the cancellation-free form
        let den = a + (a * a + 2.0 * slope * rem).max(0.0).sqrt();
        let t = if den > 0.0 { 2.0 * rem / den } else { 0.0 };
        j as f64 * self.h + t.clamp(0.0, self.h)
    }
}

/// `N` independent draws from the piecewise-(bi)linear interpolant of `rho`
/// (negative values count as zero). In 2D the x-marginal is sampled first,
/// then y from the conditional row at that x.
pub fn sample_from_density(rho: &ScalarField, n: usize, seed: u64) -> Result<Ensemble> {
    if n == 0 {
        return Err(MfgError::config("sample count must be at least 1"));
    }
    let g = *rho.grid();
    let (j, h, l) = (g.points(), g.spacing(), g.half_width());
    let vals: Vec<f64> = rho.values().iter().map(|v| v.max(0.0)).collect();
    let positions = match g.dim() {
        1 => {
            let cdf = LinearCdf::new(vals, h).ok_or(MfgError::ZeroMass)?;
            par::map_range(n, |i| {
                let mut rng = particle_rng(seed, 0, i);
                -l + cdf.sample(rng.gen::<f64>())
            })
        }
        _ => {
            let row = |i: usize| &vals[i * j..(i + 1) * j];
            let marginal: Vec<f64> = (0..j).map(|i| h * row(i).iter().sum::<f64>()).collect();
            let cdf = LinearCdf::new(marginal, h).ok_or(MfgError::ZeroMass)?;
            let pairs = par::map_range(n, |p| {
                let mut rng = particle_rng(seed, 0, p);
                let sx = cdf.sample(rng.gen::<f64>());
                let i = ((sx / h) as usize).min(j - 1);
                let w = sx / h - i as f64;
                let (r0, r1) = (row(i), row((i + 1) % j));
                let cond: Vec<f64> = r0.iter().zip(r1).map(|(a, b)| a + w * (b - a)).collect();
                let sy = match LinearCdf::new(cond, h) {
                    Some(c) => c.sample(rng.gen::<f64>()),
                    // zero-probability edge of an empty row: use the neighbour
                    None => LinearCdf::new(r1.to_vec(), h)
                        .or_else(|| LinearCdf::new(r0.to_vec(), h))
                        .map_or(0.0, |c| c.sample(rng.gen::<f64>())),
                };
                [-l + sx, -l + sy]
            });
            pairs.into_iter().flatten().collect()
        }
    };
    Ensemble::new(g, positions, seed, 0.0)
}

/// Cell index and fractional offset of `x` along one axis.
fn locate(g: &Grid, x: f64) -> (usize, f64) {
    let s = (x + g.half_width()) / g.spacing();
    let fl = s.floor();
    let i = (fl as i64).rem_euclid(g.points() as i64) as usize;
    (i, s - fl)
}

/// Periodic linear (1D) or bilinear (2D) interpolation of grid values at `x`.
pub fn interpolate_at(f: &ScalarField, x: &[f64]) -> f64 {
    let g = f.grid();
    let j = g.points();
    let v = f.values();
    let (i, w) = locate(g, x[0]);
    let i1 = (i + 1) % j;
    match g.dim() {
        1 => v[i] + w * (v[i1] - v[i]),
        _ => {
            let (k, z) = locate(g, x[1]);
            let k1 = (k + 1) % j;
            let lo = v[i * j + k] + z * (v[i * j + k1] - v[i * j + k]);
            let hi = v[i1 * j + k] + z * (v[i1 * j + k1] - v[i1 * j + k]);
            lo + w * (hi - lo)
        }
    }
}

/// Per-particle Gaussian streams for the Brownian increments.
pub struct Noise {
    rngs: Vec<ChaCha8Rng>,
}

impl Noise {
    pub fn new(seed: u64, particles: usize) -> Self {
        Noise {
            rngs: (0..particles).map(|i| particle_rng(seed, NOISE_KEY, i)).collect(),
        }
    }
}

/// `X ← wrap(X + v(X) dt + √(2D dt) ξ)` for every particle.
pub fn em_step(ens: &mut Ensemble, drift: &VectorField, diffusion: f64, dt: f64, noise: &mut Noise) {
    assert_eq!(noise.rngs.len(), ens.len(), "one noise stream per particle");
    let d = ens.dim();
    let g = ens.grid;
    let amp = (2.0 * diffusion * dt).sqrt();
    par::for_each_chunk_zip_mut(&mut ens.positions, d, &mut noise.rngs, |_, x, rng| {
        let mut v = [0.0; 2];
        for (a, va) in v.iter_mut().enumerate().take(d) {
            *va = interpolate_at(drift.component(a), x);
        }
        for a in 0..d {
            let xi: f64 = rng.sample(StandardNormal);
            x[a] = g.wrap(x[a] + v[a] * dt + amp * xi);
        }
    });
    ens.time += dt;
}

const DEPOSIT_CHUNK: usize = 4096;

/// Cloud-in-cell deposit, Gaussian smoothing of width `bandwidth`, then an
/// exact rescale to the configured mass.
pub fn empirical_density(sp: &Spectral, ens: &Ensemble, kde: &KdeConfig) -> ScalarField {
    let g = *sp.grid();
    let (j, d, n) = (g.points(), g.dim(), ens.len());
    let chunks = n.div_ceil(DEPOSIT_CHUNK);
    // fixed partition plus an ordered sum keeps the result schedule-independent
    let partial = par::map_range(chunks, |c| {
        let mut acc = vec![0.0; g.len()];
        for p in c * DEPOSIT_CHUNK..((c + 1) * DEPOSIT_CHUNK).min(n) {
            let x = &ens.positions[p * d..(p + 1) * d];
            let (i, w) = locate(&g, x[0]);
            let i1 = (i + 1) % j;
            if d == 1 {
                acc[i] += 1.0 - w;
                acc[i1] += w;
            } else {
                let (k, z) = locate(&g, x[1]);
                let k1 = (k + 1) % j;
                acc[i * j + k] += (1.0 - w) * (1.0 - z);
                acc[i * j + k1] += (1.0 - w) * z;
                acc[i1 * j + k] += w * (1.0 - z);
                acc[i1 * j + k1] += w * z;
            }
        }
        acc
    });
    let mut vals = vec![0.0; g.len()];
    for part in &partial {
        for (v, p) in vals.iter_mut().zip(part) {
            *v += p;
        }
    }
    let raw = ScalarField::from_values(g, vals).scale(1.0 / (n as f64 * g.cell_volume()));
    let smooth = sp.gaussian_smooth(&raw, kde.bandwidth);
    smooth.scale(kde.normalization.mass() / smooth.mass())
}

/// Ensemble solver settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SdeParams {
    pub particles: usize,
    pub seed: u64,
    /// Mollifier standard deviation (length units).
    pub bandwidth: f64,
    /// Steps between recomputations of the empirical density that advects itself.
    pub kde_stride: usize,
    /// Flow iteration only: move the players with their own empirical
    /// velocity `T qᴺ` instead of the input flow's velocity.
    pub self_advected: bool,
}

impl SdeParams {
    pub fn new(grid: &Grid, particles: usize, seed: u64) -> Self {
        SdeParams {
            particles,
            seed,
            bandwidth: DEFAULT_BANDWIDTH_CELLS * grid.spacing(),
            kde_stride: 1,
            self_advected: true,
        }
    }

    pub fn validate(&self, grid: &Grid) -> Result<()> {
        if self.particles == 0 {
            return Err(MfgError::config("sde.N must be at least 1"));
        }
        if self.kde_stride == 0 {
            return Err(MfgError::config("sde.kde_stride must be at least 1"));
        }
        KdeConfig::new(grid, self.bandwidth, Normalization::UnitMass).map(|_| ())
    }

    fn kde(&self, grid: &Grid, mass: f64) -> Result<KdeConfig> {
        KdeConfig::new(grid, self.bandwidth, Normalization::ReferenceMass(mass))
    }
}

enum Driver<'a> {
    /// Given drift trajectory.
    Prescribed(&'a Trajectory<VectorField>),
    /// `T q^N + α`, with `q^N` refreshed every `kde_stride` steps.
    SelfAdvected {
        control: &'a Trajectory<VectorField>,
        kde_stride: usize,
    },
}

struct ForwardRun {
    density: Trajectory<ScalarField>,
    terminal: Ensemble,
}

#[allow(clippy::too_many_arguments)]
fn run_ensemble(
    sp: &Spectral,
    initial: &Ensemble,
    driver: Driver<'_>,
    diffusion: f64,
    window: &TimeWindow,
    stride: usize,
    kde: &KdeConfig,
    mut observe: impl FnMut(usize, &Ensemble),
) -> Result<ForwardRun> {
    check_stride(window, stride)?;
    let mut ens = initial.clone();
    ens.time = window.t_start;
    let mut noise = Noise::new(initial.seed, ens.len());
    let mut frames = Vec::with_capacity(window.n_steps / stride + 1);
    let mut current = empirical_density(sp, &ens, kde);
    frames.push(current.clone());
    observe(0, &ens);
    let mut own_velocity = match driver {
        Driver::SelfAdvected { .. } => Some(sp.velocity(&current)),
        Driver::Prescribed(_) => None,
    };
    for n in 0..window.n_steps {
        let t = window.time(n);
        let drift = match driver {
            Driver::Prescribed(v) => v.at_time(t),
            Driver::SelfAdvected { control, kde_stride } => {
                if n > 0 && n % kde_stride == 0 {
                    own_velocity = Some(sp.velocity(&current));
                }
                own_velocity
                    .as_ref()
                    .expect("set for self-advection")
                    .add(&control.at_time(t))
            }
        };
        em_step(&mut ens, &drift, diffusion, window.dt, &mut noise);
        if !ens.all_finite() {
            return Err(MfgError::NonFiniteState {
                time: window.time(n + 1),
                context: "ensemble step",
            });
        }
        let stored = (n + 1) % stride == 0;
        let refresh = matches!(driver, Driver::SelfAdvected { kde_stride, .. } if (n + 1) % kde_stride == 0);
        if stored || refresh {
            current = empirical_density(sp, &ens, kde);
        }
        if stored {
            frames.push(current.clone());
            observe(frames.len() - 1, &ens);
        }
    }
    Ok(ForwardRun {
        density: Trajectory::new(*window, stride, frames)?,
        terminal: ens,
    })
}

/// Particle average of `f` at the ensemble positions.
fn particle_mean(ens: &Ensemble, f: impl Fn(&[f64]) -> f64 + Sync + Send) -> f64 {
    let vals = par::map_range(ens.len(), |i| f(ens.particle(i)));
    vals.iter().sum::<f64>() / ens.len() as f64
}

/// Ensemble tracer solution: PDE value function, particle forward pass.
#[derive(Clone, Debug)]
pub struct SdeTracerSolution {
    pub phi: Trajectory<ScalarField>,
    pub alpha: Trajectory<VectorField>,
    /// Empirical densities at the stored frames, carrying the mass of `ρ₀`.
    pub density: Trajectory<ScalarField>,
    pub initial: Ensemble,
    pub terminal: Ensemble,
    /// Monte Carlo estimate of the tracer cost.
    pub cost: CostBreakdown,
}

/// Tracer control with the forward continuity solve replaced by particles
/// sampled from `rho0` and driven by `Tq_s + ∇φ_s`.
pub fn solve_mfg1_sde(
    sp: &Spectral,
    q: &Trajectory<ScalarField>,
    rho0: &ScalarField,
    sources: &Mfg1Sources,
    diffusion: f64,
    params: &SdeParams,
) -> Result<SdeTracerSolution> {
    mfg1::check_inputs(q, rho0, sources)?;
    params.validate(sp.grid())?;
    let velocity = q.map(|f| sp.velocity(f));
    let phi = mfg1::solve_value_function(sp, &velocity, sources, diffusion)?;
    let alpha = mfg1::control_from_potential(sp, &phi);
    let drift = velocity.zip_map(&alpha, |u, a| u.add(a));
    let mass = rho0.mass();
    let kde = params.kde(sp.grid(), mass)?;
    let initial = sample_from_density(rho0, params.particles, params.seed)?;

    let mut state = Vec::with_capacity(q.len());
    let mut control = Vec::with_capacity(q.len());
    let run = run_ensemble(
        sp,
        &initial,
        Driver::Prescribed(&drift),
        diffusion,
        q.window(),
        q.stride(),
        &kde,
        |i, ens| {
            let (a, f) = (alpha.frame(i), sources.running.frame(i));
            state.push(mass * particle_mean(ens, |x| interpolate_at(f, x)));
            control.push(
                mass * particle_mean(ens, |x| {
                    0.5 * a.components().iter().map(|c| interpolate_at(c, x).powi(2)).sum::<f64>()
                }),
            );
        },
    )?;
    let terminal = mass * particle_mean(&run.terminal, |x| interpolate_at(&sources.terminal, x));
    let dt = q.frame_dt();
    let cost = CostBreakdown::new(terminal, costs::trapezoid(&state, dt), costs::trapezoid(&control, dt));
    Ok(SdeTracerSolution {
        phi,
        alpha,
        density: run.density,
        initial,
        terminal: run.terminal,
        cost,
    })
}

/// Ensemble counterpart of [`mfg2::push_forward`]: the adjoint sweep is the
/// PDE one, the forward pass moves particles with their own empirical
/// velocity plus `∇φ̃`. The returned control is re-expressed relative to the
/// input flow, `α̃ + T q̃ᴺ − T q`.
#[allow(clippy::too_many_arguments)]
pub fn ensemble_push(
    sp: &Spectral,
    q: &Trajectory<ScalarField>,
    alpha: &Trajectory<VectorField>,
    cfg: &CostConfig,
    diffusion: f64,
    initial: &Ensemble,
    kde: &KdeConfig,
    kde_stride: usize,
    self_advected: bool,
) -> Result<(PushForward, Ensemble)> {
    let velocity = q.map(|f| sp.velocity(f));
    let phi = mfg2::adjoint_sweep(sp, q, alpha, &velocity, cfg, diffusion)?;
    let control = mfg1::control_from_potential(sp, &phi);
    let (density, terminal, control) = if self_advected {
        let run = run_ensemble(
            sp,
            initial,
            Driver::SelfAdvected {
                control: &control,
                kde_stride,
            },
            diffusion,
            q.window(),
            q.stride(),
            kde,
            |_, _| {},
        )?;
        let relative = relative_control(sp, &control, &run.density, &velocity)?;
        (run.density, run.terminal, relative)
    } else {
        let drift = velocity.zip_map(&control, |u, a| u.add(a));
        let run = run_ensemble(
            sp,
            initial,
            Driver::Prescribed(&drift),
            diffusion,
            q.window(),
            q.stride(),
            kde,
            |_, _| {},
        )?;
        (run.density, run.terminal, control)
    };
    Ok((
        PushForward {
            q: density,
            phi,
            alpha: control,
        },
        terminal,
    ))
}

/// `α + T q − u` frame by frame.
fn relative_control(
    sp: &Spectral,
    alpha: &Trajectory<VectorField>,
    q: &Trajectory<ScalarField>,
    u: &Trajectory<VectorField>,
) -> Result<Trajectory<VectorField>> {
    let frames = par::map_range(q.len(), |i| {
        alpha.frame(i).add(&sp.velocity(q.frame(i))).sub(u.frame(i))
    });
    Trajectory::new(*q.window(), q.stride(), frames)
}

/// Initial pair for the ensemble iteration, built as in
/// [`mfg2::initialize`] with particle forward passes.
#[allow(clippy::too_many_arguments)]
pub fn initialize_sde(
    sp: &Spectral,
    initial: &Ensemble,
    q0: &ScalarField,
    cfg: &CostConfig,
    initializer: Initializer,
    diffusion: f64,
    window: &TimeWindow,
    stride: usize,
    kde: &KdeConfig,
    kde_stride: usize,
) -> Result<(Trajectory<ScalarField>, Trajectory<VectorField>)> {
    let g = *q0.grid();
    match initializer {
        Initializer::ZeroControl => {
            let zero = Trajectory::constant(*window, stride, VectorField::zeros(g))?;
            let run = run_ensemble(
                sp,
                initial,
                Driver::SelfAdvected {
                    control: &zero,
                    kde_stride,
                },
                diffusion,
                window,
                stride,
                kde,
                |_, _| {},
            )?;
            Ok((run.density, zero))
        }
        Initializer::TracerControl => {
            let frozen = Trajectory::constant(*window, stride, q0.clone())?;
            let sources = Mfg1Sources::from_reference(sp, &frozen, cfg);
            let velocity = frozen.map(|f| sp.velocity(f));
            let phi = mfg1::solve_value_function(sp, &velocity, &sources, diffusion)?;
            let alpha = mfg1::control_from_potential(sp, &phi);
            let drift = velocity.zip_map(&alpha, |u, a| u.add(a));
            let run = run_ensemble(
                sp,
                initial,
                Driver::Prescribed(&drift),
                diffusion,
                window,
                stride,
                kde,
                |_, _| {},
            )?;
            // drift relative to the ensemble's own velocity: ∇φ + T q₀ − T qᴺ
            let own = run.density.map(|f| sp.velocity(f));
            let a0 = relative_control(sp, &alpha, &frozen, &own)?;
            Ok((run.density, a0))
        }
    }
}

/// Result of the ensemble flow-control iteration.
#[derive(Clone, Debug)]
pub struct SdeFlowSolution {
    pub solution: Mfg2Solution,
    pub initial: Ensemble,
    /// Terminal particles of the last ensemble push.
    pub terminal: Ensemble,
}

/// Flow control with every forward solve replaced by an ensemble of
/// `params.particles` players sampled once from `q0` (common random numbers
/// across iterations). Empirical densities carry the mass of `q0`.
#[allow(clippy::too_many_arguments)]
pub fn solve_mfg2_sde(
    sp: &Spectral,
    q0: &ScalarField,
    cfg: &CostConfig,
    iter_cfg: &IterationConfig,
    diffusion: f64,
    window: &TimeWindow,
    stride: usize,
    params: &SdeParams,
) -> Result<SdeFlowSolution> {
    iter_cfg.validate()?;
    params.validate(sp.grid())?;
    let kde = params.kde(sp.grid(), q0.mass())?;
    let initial = sample_from_density(q0, params.particles, params.seed)?;
    if params.particles < 100 {
        warn!("{} particles give a very rough empirical density", params.particles);
    }
    let (q, a) = initialize_sde(
        sp,
        &initial,
        q0,
        cfg,
        iter_cfg.initializer,
        diffusion,
        window,
        stride,
        &kde,
        params.kde_stride,
    )?;
    let mut terminal = initial.clone();
    let solution = mfg2::iterate_from(sp, q, a, cfg, iter_cfg, |qq, aa| {
        let (pf, last) = ensemble_push(
            sp,
            qq,
            aa,
            cfg,
            diffusion,
            &initial,
            &kde,
            params.kde_stride,
            params.self_advected,
        )?;
        terminal = last;
        Ok(pf)
    })?;
    Ok(SdeFlowSolution {
        solution,
        initial,
        terminal,
    })
}
