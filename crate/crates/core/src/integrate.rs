//! IMEX time stepping and trajectory storage.
//!
//! The scheme is a two-stage midpoint rule for the explicit part combined with
//! Crank–Nicolson for diffusion, the implicit solve being a per-mode division:
//!
//! ```text
//! û*      = (ûⁿ + dt/2 N̂(tⁿ, uⁿ)) / (1 + dt/2 D|k|²)
//! ûⁿ⁺¹    = ûⁿ + dt N̂(tⁿ + dt/2, u*) − dt D|k|² û*
//! ```

use log::warn;
use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::field::{Field, ScalarField, VectorField};
use crate::spectral::{Spectral, Spectrum};

/// Uniform time grid `t_start, t_start + dt, …, t_end`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TimeWindow {
    pub t_start: f64,
    pub t_end: f64,
    pub dt: f64,
    pub n_steps: usize,
}

impl TimeWindow {
    pub fn new(t_start: f64, t_end: f64, dt: f64) -> Result<Self> {
        if !(dt > 0.0) || !dt.is_finite() {
            return Err(MfgError::config(format!("dt must be positive, got {dt}")));
        }
        if !(t_end > t_start) {
            return Err(MfgError::config(format!(
                "window end {t_end} must exceed start {t_start}"
            )));
        }
        let exact = (t_end - t_start) / dt;
        let n = exact.round();
        if (exact - n).abs() > 1e-9 * exact.max(1.0) || n < 1.0 {
            return Err(MfgError::config(format!(
                "window length {} is not an integer number of steps of {dt}",
                t_end - t_start
            )));
        }
        Ok(TimeWindow {
            t_start,
            t_end,
            dt,
            n_steps: n as usize,
        })
    }

    pub fn time(&self, step: usize) -> f64 {
        if step == self.n_steps {
            self.t_end
        } else {
            self.t_start + step as f64 * self.dt
        }
    }

    pub fn duration(&self) -> f64 {
        self.t_end - self.t_start
    }
}

/// Metadata written next to trajectory dumps.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajectoryMeta {
    pub t_start: f64,
    #[serde(rename = "T")]
    pub t_end: f64,
    pub dt: f64,
    pub stride: usize,
    pub frame_count: usize,
}

/// Frames stored every `stride` steps; frame `i` is the state at
/// `t_start + i·stride·dt`.
#[derive(Clone, Debug)]
pub struct Trajectory<F> {
    window: TimeWindow,
    stride: usize,
    frames: Vec<F>,
}

pub fn check_stride(window: &TimeWindow, stride: usize) -> Result<()> {
    if stride == 0 || !window.n_steps.is_multiple_of(stride) {
        return Err(MfgError::config(format!(
            "stride {stride} must divide the step count {}",
            window.n_steps
        )));
    }
    Ok(())
}

impl<F: Field> Trajectory<F> {
    pub fn new(window: TimeWindow, stride: usize, frames: Vec<F>) -> Result<Self> {
        check_stride(&window, stride)?;
        let expected = window.n_steps / stride + 1;
        if frames.len() != expected {
            return Err(MfgError::config(format!(
                "trajectory has {} frames, expected {expected}",
                frames.len()
            )));
        }
        Ok(Trajectory { window, stride, frames })
    }

    /// The same field at every stored time.
    pub fn constant(window: TimeWindow, stride: usize, f: F) -> Result<Self> {
        check_stride(&window, stride)?;
        let n = window.n_steps / stride + 1;
        Trajectory::new(window, stride, vec![f; n])
    }

    /// Keep every `factor`-th stored frame.
    pub fn thinned(&self, factor: usize) -> Result<Self> {
        let stride = self.stride * factor;
        check_stride(&self.window, stride)?;
        let frames = self.frames.iter().step_by(factor).cloned().collect();
        Trajectory::new(self.window, stride, frames)
    }

    pub fn window(&self) -> &TimeWindow {
        &self.window
    }

    pub fn stride(&self) -> usize {
        self.stride
    }

    pub fn frames(&self) -> &[F] {
        &self.frames
    }

    pub fn frames_mut(&mut self) -> &mut [F] {
        &mut self.frames
    }

    pub fn into_frames(self) -> Vec<F> {
        self.frames
    }

    pub fn len(&self) -> usize {
        self.frames.len()
    }

    pub fn is_empty(&self) -> bool {
        self.frames.is_empty()
    }

    pub fn frame(&self, i: usize) -> &F {
        &self.frames[i]
    }

    pub fn first(&self) -> &F {
        &self.frames[0]
    }

    pub fn last(&self) -> &F {
        self.frames.last().expect("trajectory has frames")
    }

    /// Spacing between stored frames.
    pub fn frame_dt(&self) -> f64 {
        self.window.dt * self.stride as f64
    }

    pub fn frame_time(&self, i: usize) -> f64 {
        if i + 1 == self.frames.len() {
            self.window.t_end
        } else {
            self.window.t_start + i as f64 * self.frame_dt()
        }
    }

    pub fn meta(&self) -> TrajectoryMeta {
        TrajectoryMeta {
            t_start: self.window.t_start,
            t_end: self.window.t_end,
            dt: self.window.dt,
            stride: self.stride,
            frame_count: self.frames.len(),
        }
    }

    /// State at fractional step index `step` (in units of `dt`), linear in time
    /// between stored frames.
    pub fn at_step(&self, step: f64) -> F {
        let pos = (step / self.stride as f64).clamp(0.0, (self.frames.len() - 1) as f64);
        let i = pos.floor() as usize;
        let w = pos - i as f64;
        if w == 0.0 || i + 1 >= self.frames.len() {
            self.frames[i].clone()
        } else {
            self.frames[i].lerp(&self.frames[i + 1], w)
        }
    }

    pub fn at_time(&self, t: f64) -> F {
        self.at_step((t - self.window.t_start) / self.window.dt)
    }

    /// Frame-wise map, run in parallel over frames.
    pub fn map<G: Field>(&self, f: impl Fn(&F) -> G + Sync + Send) -> Trajectory<G> {
        Trajectory {
            window: self.window,
            stride: self.stride,
            frames: crate::par::map_slice(&self.frames, f),
        }
    }

    /// Frame-wise map over two aligned trajectories.
    pub fn zip_map<G: Field, H: Field>(
        &self,
        other: &Trajectory<G>,
        f: impl Fn(&F, &G) -> H + Sync + Send,
    ) -> Trajectory<H> {
        assert!(self.aligned_with(other), "trajectories are not aligned");
        Trajectory {
            window: self.window,
            stride: self.stride,
            frames: crate::par::map_range(self.frames.len(), |i| f(&self.frames[i], &other.frames[i])),
        }
    }

    pub fn aligned_with<G>(&self, other: &Trajectory<G>) -> bool {
        self.window == other.window && self.stride == other.stride && self.frames.len() == other.frames.len()
    }

    /// Time-averaged relative L2 distance `sqrt(Σ‖a−b‖²) / sqrt(Σ‖b‖²)`;
    /// falls back to the absolute distance when `other` vanishes.
    pub fn relative_distance(&self, other: &Trajectory<F>) -> f64 {
        let num: f64 = self.frames.iter().zip(&other.frames).map(|(a, b)| a.dist_sq(b)).sum();
        let den: f64 = other.frames.iter().map(|b| b.norm_sq_integral()).sum();
        if den > 0.0 {
            (num / den).sqrt()
        } else {
            (num / self.frames.len() as f64).sqrt()
        }
    }

    pub fn all_finite(&self) -> bool {
        self.frames.iter().all(|f| f.all_finite())
    }
}

fn spectrum_is_finite(s: &Spectrum) -> bool {
    s.coeffs().iter().all(|c| c.re.is_finite() && c.im.is_finite())
}

/// One IMEX step on spectral state. `explicit` returns the spectrum of the
/// non-diffusive right-hand side at a given time.
pub fn imex_step_spectral(
    sp: &Spectral,
    state: &Spectrum,
    t: f64,
    dt: f64,
    diffusion: f64,
    mut explicit: impl FnMut(f64, &Spectrum) -> Spectrum,
) -> Spectrum {
    let k2 = sp.wavenumber_sq();
    let n0 = explicit(t, state);
    let mut stage = state.clone();
    stage.add_scaled(0.5 * dt, &n0);
    sp.solve_helmholtz_in_place(&mut stage, 0.5 * dt * diffusion);
    let n1 = explicit(t + 0.5 * dt, &stage);
    let mut next = state.clone();
    let out = next.coeffs_mut();
    for (i, c) in out.iter_mut().enumerate() {
        *c += dt * n1.coeffs()[i] - dt * diffusion * k2[i] * stage.coeffs()[i];
    }
    next
}

/// One IMEX step on a physical field; `explicit` excludes the `DΔ` term.
pub fn imex_step(
    sp: &Spectral,
    state: &ScalarField,
    t: f64,
    dt: f64,
    diffusion: f64,
    explicit: impl Fn(f64, &ScalarField) -> ScalarField,
) -> ScalarField {
    let s = sp.forward(state);
    let next = imex_step_spectral(sp, &s, t, dt, diffusion, |tt, ss| {
        sp.forward(&explicit(tt, &sp.inverse(ss)))
    });
    sp.inverse(&next)
}

/// Largest `dt·|v|/h` over the grid.
pub fn cfl_number(v: &VectorField, dt: f64) -> f64 {
    let h = v.grid().spacing();
    let speed = v.norm_sq().max().sqrt();
    dt * speed / h
}

const CFL_LIMIT: f64 = 0.5;

fn check_cfl(v: &VectorField, dt: f64, context: &str) {
    let c = cfl_number(v, dt);
    if c > CFL_LIMIT {
        warn!("{context}: CFL number {c:.3} exceeds {CFL_LIMIT}");
    }
}

/// How the forward continuity equation is transported.
#[derive(Clone, Copy, Debug)]
pub enum Transport<'a> {
    /// No drift: pure diffusion.
    Still,
    /// A given drift trajectory, typically `Tq_s + α_s`.
    Prescribed(&'a Trajectory<VectorField>),
    /// Drift `T(state) + α_s`, with optional control `α`.
    SelfAdvected(Option<&'a Trajectory<VectorField>>),
}

/// Drift `T q_s + α_s` frame by frame; either part may be absent.
pub fn drift_trajectory(
    sp: &Spectral,
    q: Option<&Trajectory<ScalarField>>,
    alpha: Option<&Trajectory<VectorField>>,
) -> Trajectory<VectorField> {
    match (q, alpha) {
        (Some(q), Some(a)) => q.zip_map(a, |qf, af| sp.velocity(qf).add(af)),
        (Some(q), None) => q.map(|qf| sp.velocity(qf)),
        (None, Some(a)) => a.clone(),
        (None, None) => panic!("drift_trajectory needs at least one input"),
    }
}

/// Forward solve of `∂ρ + ∇·(vρ) = DΔρ` over `window`, storing every `stride` steps.
pub fn solve_forward_continuity(
    sp: &Spectral,
    rho0: &ScalarField,
    transport: Transport<'_>,
    diffusion: f64,
    window: &TimeWindow,
    stride: usize,
) -> Result<Trajectory<ScalarField>> {
    check_stride(window, stride)?;
    if !rho0.is_finite() {
        return Err(MfgError::NonFiniteState {
            time: window.t_start,
            context: "initial density",
        });
    }
    let drift_at = |t: f64, s: &Spectrum| -> Option<VectorField> {
        match transport {
            Transport::Still => None,
            Transport::Prescribed(v) => Some(v.at_time(t)),
            Transport::SelfAdvected(alpha) => {
                let u = sp
                    .velocity_spectrum(s)
                    .iter()
                    .map(|c| sp.inverse(c))
                    .collect::<Vec<_>>();
                let u = VectorField::from_components(u);
                Some(match alpha {
                    Some(a) => u.add(&a.at_time(t)),
                    None => u,
                })
            }
        }
    };
    let explicit = |t: f64, s: &Spectrum| -> Spectrum {
        match drift_at(t, s) {
            None => Spectrum::zeros(*sp.grid()),
            Some(v) => {
                let rho = sp.inverse(s);
                let mut out = sp.flux_divergence(&v, &rho);
                for c in out.coeffs_mut() {
                    *c = -*c;
                }
                out
            }
        }
    };

    let mut frames = Vec::with_capacity(window.n_steps / stride + 1);
    frames.push(rho0.clone());
    let mut state = sp.forward(rho0);
    for n in 0..window.n_steps {
        let t = window.time(n);
        if n % stride == 0 {
            if let Some(v) = drift_at(t, &state) {
                check_cfl(&v, window.dt, "forward solve");
            }
        }
        state = imex_step_spectral(sp, &state, t, window.dt, diffusion, &explicit);
        if !spectrum_is_finite(&state) {
            return Err(MfgError::NonFiniteState {
                time: window.time(n + 1),
                context: "forward continuity",
            });
        }
        if (n + 1) % stride == 0 {
            frames.push(sp.inverse(&state));
        }
    }
    Trajectory::new(*window, stride, frames)
}

/// Backward solve of
/// `∂ₛφ + ½|∇φ|² + ∇φ·u_s + DΔφ = S_s`, `φ(T) = phi_t`,
/// where `u` is the advecting velocity and `S` the sum of the given sources.
/// Integrated in `τ = T − s`; frames are returned in ascending `s`.
pub fn solve_backward_hje(
    sp: &Spectral,
    phi_t: &ScalarField,
    velocity: Option<&Trajectory<VectorField>>,
    sources: &[&Trajectory<ScalarField>],
    diffusion: f64,
    window: &TimeWindow,
    stride: usize,
) -> Result<Trajectory<ScalarField>> {
    solve_backward_hje_with(sp, phi_t, velocity, sources, diffusion, window, stride, 1.0)
}

/// As [`solve_backward_hje`] with the Hamiltonian `½|∇φ|²` scaled by `quadratic`
/// (0 gives the linear adjoint equation).
#[allow(clippy::too_many_arguments)]
pub fn solve_backward_hje_with(
    sp: &Spectral,
    phi_t: &ScalarField,
    velocity: Option<&Trajectory<VectorField>>,
    sources: &[&Trajectory<ScalarField>],
    diffusion: f64,
    window: &TimeWindow,
    stride: usize,
    quadratic: f64,
) -> Result<Trajectory<ScalarField>> {
    check_stride(window, stride)?;
    if !phi_t.is_finite() {
        return Err(MfgError::NonFiniteState {
            time: window.t_end,
            context: "terminal condition",
        });
    }
    let dim = sp.grid().dim();
    // s = T − τ, i.e. fractional step index n_steps − τ/dt
    let s_step = |tau: f64| window.n_steps as f64 - tau / window.dt;
    let explicit = |tau: f64, s: &Spectrum| -> Spectrum {
        let step = s_step(tau);
        let grad = sp.gradient_from_spectrum(s);
        let mut phys = ScalarField::zeros(*sp.grid());
        if quadratic != 0.0 {
            phys.axpy(0.5 * quadratic, &grad.norm_sq());
        }
        if let Some(u) = velocity {
            let u = u.at_step(step);
            for a in 0..dim {
                phys.axpy(1.0, &grad.component(a).mul(u.component(a)));
            }
        }
        let mut out = sp.forward(&phys);
        sp.dealias_spectrum(&mut out);
        if !sources.is_empty() {
            let mut src = ScalarField::zeros(*sp.grid());
            for s in sources {
                src.axpy(1.0, &s.at_step(step));
            }
            out.add_scaled(-1.0, &sp.forward(&src));
        }
        out
    };

    let mut rev = Vec::with_capacity(window.n_steps / stride + 1);
    rev.push(phi_t.clone());
    let mut state = sp.forward(phi_t);
    for n in 0..window.n_steps {
        let tau = n as f64 * window.dt;
        if n % stride == 0 {
            if let Some(u) = velocity {
                check_cfl(&u.at_step(s_step(tau)), window.dt, "backward solve");
            }
        }
        state = imex_step_spectral(sp, &state, tau, window.dt, diffusion, &explicit);
        if !spectrum_is_finite(&state) {
            return Err(MfgError::NonFiniteState {
                time: window.time(window.n_steps - n - 1),
                context: "backward HJE",
            });
        }
        if (n + 1) % stride == 0 {
            rev.push(sp.inverse(&state));
        }
    }
    rev.reverse();
    Trajectory::new(*window, stride, rev)
}
