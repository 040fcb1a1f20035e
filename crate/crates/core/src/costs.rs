//! Running and terminal cost functionals and their variational derivatives.

use serde::{Deserialize, Serialize};

use crate::error::{MfgError, Result};
use crate::field::{ScalarField, VectorField};
use crate::integrate::Trajectory;
use crate::par;
use crate::spectral::Spectral;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum CostKind {
    #[serde(rename = "L2", alias = "l2")]
    L2,
    #[serde(rename = "KL", alias = "kl")]
    Kl,
}

impl std::str::FromStr for CostKind {
    type Err = MfgError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "l2" => Ok(CostKind::L2),
            "kl" => Ok(CostKind::Kl),
            other => Err(MfgError::config(format!(
                "unknown cost kind `{other}` (expected L2 or KL)"
            ))),
        }
    }
}

/// Relative positivity floor used inside logarithms.
pub const KL_FLOOR: f64 = 1e-12;

/// Default width, in grid spacings, of the Gaussian applied to KL derivatives
/// before they drive a coupled adjoint solve.
pub const DEFAULT_DERIVATIVE_SMOOTHING: f64 = 2.0;

#[derive(Clone, Debug)]
pub struct CostConfig {
    pub kind: CostKind,
    pub gamma: f64,
    pub q_i: ScalarField,
    pub q_f: ScalarField,
    q_bar: ScalarField,
    derivative_smoothing: f64,
}

impl CostConfig {
    pub fn new(kind: CostKind, gamma: f64, q_i: ScalarField, q_f: ScalarField) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(MfgError::config(format!("gamma must lie in [0, 1], got {gamma}")));
        }
        if q_i.grid() != q_f.grid() {
            return Err(MfgError::config("initial and target states live on different grids"));
        }
        if kind == CostKind::Kl && (q_f.min() <= 0.0 || q_i.min() <= 0.0) {
            return Err(MfgError::config("KL cost needs strictly positive reference states"));
        }
        let q_bar = q_i.zip_map(&q_f, |a, b| gamma * a + (1.0 - gamma) * b);
        Ok(CostConfig {
            kind,
            gamma,
            q_i,
            q_f,
            q_bar,
            derivative_smoothing: DEFAULT_DERIVATIVE_SMOOTHING,
        })
    }

    /// Set the KL derivative smoothing width in grid spacings (0 disables it).
    pub fn with_derivative_smoothing(mut self, width: f64) -> Result<Self> {
        if !(width >= 0.0 && width.is_finite()) {
            return Err(MfgError::config(format!(
                "derivative smoothing must be a finite width >= 0, got {width}"
            )));
        }
        self.derivative_smoothing = width;
        Ok(self)
    }

    pub fn derivative_smoothing(&self) -> f64 {
        self.derivative_smoothing
    }

    /// `γ Q_i + (1 − γ) Q_f`.
    pub fn q_bar(&self) -> &ScalarField {
        &self.q_bar
    }
}

/// Derivative as fed to the coupled adjoint solve.
///
/// The log in the KL derivative turns grid-scale ripple of a near-vacuum
/// density into O(10) gradients in the adjoint, so KL derivatives are smoothed
/// by a Gaussian of `derivative_smoothing` grid spacings. L2 derivatives pass through.
pub fn adjoint_derivative(sp: &Spectral, derivative: ScalarField, cfg: &CostConfig) -> ScalarField {
    if cfg.kind == CostKind::Kl && cfg.derivative_smoothing > 0.0 {
        sp.gaussian_smooth(&derivative, cfg.derivative_smoothing * sp.grid().spacing())
    } else {
        derivative
    }
}

/// A functional value with its variational derivative.
#[derive(Clone, Debug)]
pub struct CostValue {
    pub value: f64,
    pub derivative: ScalarField,
    /// Nodes raised to the positivity floor (KL only).
    pub clamped: usize,
}

fn clamp_floor(q: &ScalarField) -> (ScalarField, usize) {
    let floor = KL_FLOOR * q.max().max(0.0);
    let floor = if floor > 0.0 { floor } else { f64::MIN_POSITIVE };
    let mut count = 0;
    let c = ScalarField::from_values(
        *q.grid(),
        q.values()
            .iter()
            .map(|&v| {
                if v < floor {
                    count += 1;
                    floor
                } else {
                    v
                }
            })
            .collect(),
    );
    (c, count)
}

fn kl(q: &ScalarField, reference: &ScalarField, with_derivative: bool) -> CostValue {
    let (qc, clamped) = clamp_floor(q);
    let logs = qc.zip_map(reference, |a, b| (a / b).ln());
    let value = qc.dot(&logs);
    let derivative = if with_derivative {
        logs.map(|l| 1.0 + l)
    } else {
        ScalarField::zeros(*q.grid())
    };
    CostValue {
        value,
        derivative,
        clamped,
    }
}

fn l2_state(sp: &Spectral, q: &ScalarField, reference: &ScalarField, with_derivative: bool) -> CostValue {
    let s = sp.forward(&q.sub(reference));
    let w = sp.velocity_spectrum(&s);
    let value = 0.5 * w.iter().map(|c| sp.inverse(c)).map(|u| u.dot(&u)).sum::<f64>();
    let derivative = if with_derivative {
        sp.inverse(&sp.adjoint_velocity_spectrum(&w))
    } else {
        ScalarField::zeros(*q.grid())
    };
    CostValue {
        value,
        derivative,
        clamped: 0,
    }
}

/// Running state cost `𝓕(q)` and `F = δ𝓕/δq`.
pub fn state_cost(sp: &Spectral, q: &ScalarField, cfg: &CostConfig) -> CostValue {
    match cfg.kind {
        CostKind::L2 => l2_state(sp, q, &cfg.q_bar, true),
        CostKind::Kl => kl(q, &cfg.q_bar, true),
    }
}

/// `𝓕(q)` without the derivative.
pub fn state_cost_value(sp: &Spectral, q: &ScalarField, cfg: &CostConfig) -> (f64, usize) {
    let v = match cfg.kind {
        CostKind::L2 => l2_state(sp, q, &cfg.q_bar, false),
        CostKind::Kl => kl(q, &cfg.q_bar, false),
    };
    (v.value, v.clamped)
}

/// Terminal cost `𝓖(q_T)` and `G = δ𝓖/δq_T`.
pub fn terminal_cost(q_t: &ScalarField, cfg: &CostConfig) -> CostValue {
    match cfg.kind {
        CostKind::L2 => {
            let d = q_t.sub(&cfg.q_f);
            CostValue {
                value: 0.5 * d.dot(&d),
                derivative: d,
                clamped: 0,
            }
        }
        CostKind::Kl => kl(q_t, &cfg.q_f, true),
    }
}

/// `∫ ½|α|² q dx`.
pub fn control_density(q: &ScalarField, alpha: &VectorField) -> f64 {
    0.5 * alpha.norm_sq().dot(q)
}

/// Trapezoidal rule over equally spaced samples.
pub fn trapezoid(values: &[f64], dt: f64) -> f64 {
    match values.len() {
        0 | 1 => 0.0,
        n => {
            let inner: f64 = values[1..n - 1].iter().sum();
            dt * (0.5 * values[0] + inner + 0.5 * values[n - 1])
        }
    }
}

/// `∫∫ ½|α_s|² q_s dx ds`.
pub fn control_cost(q: &Trajectory<ScalarField>, alpha: &Trajectory<VectorField>) -> f64 {
    assert!(q.aligned_with(alpha), "trajectories are not aligned");
    let per = par::map_range(q.len(), |i| control_density(q.frame(i), alpha.frame(i)));
    trapezoid(&per, q.frame_dt())
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct CostBreakdown {
    pub terminal: f64,
    pub running_state: f64,
    pub running_control: f64,
    pub total: f64,
    #[serde(default, skip_serializing_if = "is_zero")]
    pub clamped_nodes: usize,
}

fn is_zero(n: &usize) -> bool {
    *n == 0
}

impl CostBreakdown {
    pub fn new(terminal: f64, running_state: f64, running_control: f64) -> Self {
        CostBreakdown {
            terminal,
            running_state,
            running_control,
            total: terminal + running_state + running_control,
            clamped_nodes: 0,
        }
    }
}

/// Per-frame running contributions `(𝓕(q), ∫½|α|²q, clamps)` for the coupled model.
pub fn running_frame_mfg2(sp: &Spectral, q: &ScalarField, alpha: &VectorField, cfg: &CostConfig) -> (f64, f64, usize) {
    let (f, c) = state_cost_value(sp, q, cfg);
    (f, control_density(q, alpha), c)
}

/// Assemble a breakdown from per-frame running terms and the terminal value.
pub fn assemble_mfg2(per_frame: &[(f64, f64, usize)], frame_dt: f64, terminal: (f64, usize)) -> CostBreakdown {
    let state: Vec<f64> = per_frame.iter().map(|p| p.0).collect();
    let control: Vec<f64> = per_frame.iter().map(|p| p.1).collect();
    let mut b = CostBreakdown::new(terminal.0, trapezoid(&state, frame_dt), trapezoid(&control, frame_dt));
    b.clamped_nodes = per_frame.iter().map(|p| p.2).sum::<usize>() + terminal.1;
    b
}

/// `𝓖(q_T) + ∫ [∫ ½|α|² q dx + 𝓕(q)] ds`.
pub fn total_cost_mfg2(
    sp: &Spectral,
    q: &Trajectory<ScalarField>,
    alpha: &Trajectory<VectorField>,
    cfg: &CostConfig,
) -> CostBreakdown {
    assert!(q.aligned_with(alpha), "trajectories are not aligned");
    let per = par::map_range(q.len(), |i| running_frame_mfg2(sp, q.frame(i), alpha.frame(i), cfg));
    let t = terminal_cost(q.last(), cfg);
    assemble_mfg2(&per, q.frame_dt(), (t.value, t.clamped))
}

/// Tracer cost with precomputed `F(x, q_s)` frames and terminal weight `G(x, q_T)`:
/// `∫ G ρ_T + ∫∫ (½|α|² + F) ρ`.
pub fn total_cost_mfg1_with(
    rho: &Trajectory<ScalarField>,
    alpha: &Trajectory<VectorField>,
    f: &Trajectory<ScalarField>,
    g: &ScalarField,
) -> CostBreakdown {
    assert!(
        rho.aligned_with(alpha) && rho.aligned_with(f),
        "trajectories are not aligned"
    );
    let per = par::map_range(rho.len(), |i| {
        let r = rho.frame(i);
        (f.frame(i).dot(r), control_density(r, alpha.frame(i)))
    });
    let state: Vec<f64> = per.iter().map(|p| p.0).collect();
    let control: Vec<f64> = per.iter().map(|p| p.1).collect();
    CostBreakdown::new(
        g.dot(rho.last()),
        trapezoid(&state, rho.frame_dt()),
        trapezoid(&control, rho.frame_dt()),
    )
}

/// Running-cost weights `F(x, q_s)` for every frame of a given flow.
pub fn state_derivative_trajectory(
    sp: &Spectral,
    q: &Trajectory<ScalarField>,
    cfg: &CostConfig,
) -> Trajectory<ScalarField> {
    q.map(|f| state_cost(sp, f, cfg).derivative)
}

pub fn total_cost_mfg1(
    sp: &Spectral,
    rho: &Trajectory<ScalarField>,
    alpha: &Trajectory<VectorField>,
    q: &Trajectory<ScalarField>,
    cfg: &CostConfig,
) -> CostBreakdown {
    let f = state_derivative_trajectory(sp, q, cfg);
    let g = terminal_cost(q.last(), cfg).derivative;
    total_cost_mfg1_with(rho, alpha, &f, &g)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flow::{steady_profile, SteadyStateParams};
    use crate::grid::Grid;
    use crate::integrate::TimeWindow;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;
    use std::f64::consts::PI;

    fn setup(kind: CostKind, gamma: f64) -> (Grid, Spectral, CostConfig) {
        let g = Grid::line(10.0, 128).unwrap();
        let qi = steady_profile(&SteadyStateParams::new(1.0, -5.0, 0.5), &g);
        let qf = steady_profile(&SteadyStateParams::new(1.0, 5.0, 0.5), &g);
        (g, Spectral::new(g), CostConfig::new(kind, gamma, qi, qf).unwrap())
    }

    fn smooth_direction(g: Grid, rng: &mut ChaCha8Rng) -> ScalarField {
        let c: Vec<(f64, f64)> = (1..=6)
            .map(|_| (rng.gen_range(-1.0..1.0), rng.gen_range(0.0..6.3)))
            .collect();
        ScalarField::from_fn(g, |x, _| {
            c.iter()
                .enumerate()
                .map(|(m, (a, p))| a * (PI * (m + 1) as f64 * x / 10.0 + p).cos())
                .sum::<f64>()
        })
    }

    #[test]
    fn kind_parses_case_insensitively() {
        assert_eq!("kl".parse::<CostKind>().unwrap(), CostKind::Kl);
        assert_eq!("L2".parse::<CostKind>().unwrap(), CostKind::L2);
        assert!("W2".parse::<CostKind>().is_err());
    }

    #[test]
    fn config_validation() {
        let (g, _, cfg) = setup(CostKind::L2, 0.2);
        assert!(CostConfig::new(CostKind::L2, 1.5, cfg.q_i.clone(), cfg.q_f.clone()).is_err());
        let with_zero = cfg.q_f.map(|v| v - 0.5);
        assert!(CostConfig::new(CostKind::Kl, 0.2, cfg.q_i.clone(), with_zero.clone()).is_err());
        assert!(CostConfig::new(CostKind::L2, 0.2, cfg.q_i.clone(), with_zero).is_ok());
        let other = ScalarField::zeros(Grid::line(10.0, 64).unwrap());
        assert!(CostConfig::new(CostKind::L2, 0.2, ScalarField::zeros(g), other).is_err());
    }

    #[test]
    fn gamma_endpoints() {
        let (_, _, c1) = setup(CostKind::Kl, 1.0);
        assert_eq!(c1.q_bar().values(), c1.q_i.values());
        let (_, _, c0) = setup(CostKind::Kl, 0.0);
        assert_eq!(c0.q_bar().values(), c0.q_f.values());
    }

    #[test]
    fn state_cost_vanishes_at_reference() {
        for kind in [CostKind::L2, CostKind::Kl] {
            let (_, sp, cfg) = setup(kind, 0.2);
            let v = state_cost(&sp, &cfg.q_bar().clone(), &cfg);
            assert!(v.value.abs() < 1e-14, "{kind:?}: {}", v.value);
        }
    }

    #[test]
    fn terminal_cost_at_target() {
        let (_, _, l2) = setup(CostKind::L2, 0.2);
        let v = terminal_cost(&l2.q_f.clone(), &l2);
        assert_eq!(v.value, 0.0);
        assert_eq!(v.derivative.max_abs(), 0.0);
        let (_, _, kl) = setup(CostKind::Kl, 0.2);
        let v = terminal_cost(&kl.q_f.clone(), &kl);
        assert_eq!(v.value, 0.0);
        assert!(v.derivative.values().iter().all(|&d| d == 1.0));
    }

    #[test]
    fn l2_state_cost_of_single_mode() {
        // q' = cos(k₁x) → |Tq'|² = sin²(k₁x)/k₁², ½∫ = L/(2k₁²)
        let (g, sp, cfg) = setup(CostKind::L2, 0.2);
        let k1 = PI / 10.0;
        let q = cfg.q_bar().add(&ScalarField::from_fn(g, |x, _| (k1 * x).cos()));
        let v = state_cost(&sp, &q, &cfg);
        let oracle: f64 = {
            // midpoint quadrature on a much finer independent grid
            let n = 20000;
            let h = 20.0 / n as f64;
            (0..n)
                .map(|i| {
                    let x = -10.0 + (i as f64 + 0.5) * h;
                    0.5 * ((k1 * x).sin() / k1).powi(2) * h
                })
                .sum()
        };
        assert!((oracle - 10.0 / (2.0 * k1 * k1)).abs() < 1e-6);
        assert!((v.value - oracle).abs() < 1e-6 * oracle);
    }

    #[test]
    fn l2_terminal_of_constant_offset() {
        let (_, _, cfg) = setup(CostKind::L2, 0.2);
        let c = 0.3;
        let v = terminal_cost(&cfg.q_f.map(|v| v + c), &cfg);
        assert!((v.value - c * c * 10.0).abs() < 1e-12);
    }

    fn check_derivative(
        value: impl Fn(&ScalarField) -> f64,
        deriv: &ScalarField,
        q: &ScalarField,
        rng: &mut ChaCha8Rng,
    ) {
        let eps = 1e-4;
        for _ in 0..20 {
            let d = smooth_direction(*q.grid(), rng).scale(0.05);
            let fd = (value(&q.add(&d.scale(eps))) - value(&q.sub(&d.scale(eps)))) / (2.0 * eps);
            let an = deriv.dot(&d);
            assert!((fd - an).abs() < 1e-5 * an.abs().max(1e-3), "fd {fd} vs {an}");
        }
    }

    #[test]
    fn variational_derivatives_match_central_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for kind in [CostKind::L2, CostKind::Kl] {
            let (g, sp, cfg) = setup(kind, 0.2);
            let base = steady_profile(&SteadyStateParams::new(0.8, 1.0, 0.5), &g).map(|v| v + 0.05);
            let s = state_cost(&sp, &base, &cfg);
            check_derivative(|q| state_cost_value(&sp, q, &cfg).0, &s.derivative, &base, &mut rng);
            let t = terminal_cost(&base, &cfg);
            check_derivative(|q| terminal_cost(q, &cfg).value, &t.derivative, &base, &mut rng);
        }
    }

    #[test]
    fn derivatives_in_two_dimensions() {
        let g = Grid::plane(10.0, 32).unwrap();
        let sp = Spectral::new(g);
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let qi = steady_profile(&SteadyStateParams::new(1.0, -5.0, 0.5), &g);
        let qf = steady_profile(&SteadyStateParams::new(1.0, 5.0, 0.5), &g);
        for kind in [CostKind::L2, CostKind::Kl] {
            let cfg = CostConfig::new(kind, 0.2, qi.clone(), qf.clone()).unwrap();
            let base = qi.map(|v| v + 0.1);
            let s = state_cost(&sp, &base, &cfg);
            let eps = 1e-4;
            for _ in 0..5 {
                let (p1, p2): (f64, f64) = (rng.gen_range(0.0..6.3), rng.gen_range(0.0..6.3));
                let d = ScalarField::from_fn(g, |x, y| 0.02 * (0.3 * x + p1).cos() * (0.6 * y + p2).sin());
                let fd = (state_cost_value(&sp, &base.add(&d.scale(eps)), &cfg).0
                    - state_cost_value(&sp, &base.sub(&d.scale(eps)), &cfg).0)
                    / (2.0 * eps);
                let an = s.derivative.dot(&d);
                assert!((fd - an).abs() < 1e-5 * an.abs().max(1e-3));
            }
        }
    }

    #[test]
    fn kl_clamps_nonpositive_values() {
        let (_, sp, cfg) = setup(CostKind::Kl, 0.2);
        let mut q = cfg.q_bar().clone();
        q.values_mut()[0] = -1.0;
        q.values_mut()[1] = 0.0;
        let v = state_cost(&sp, &q, &cfg);
        assert_eq!(v.clamped, 2);
        assert!(v.value.is_finite() && v.derivative.is_finite());
    }

    #[test]
    fn nonnegativity() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let (g, sp, cfg) = setup(CostKind::Kl, 0.2);
        for _ in 0..20 {
            let p = smooth_direction(g, &mut rng).map(|v| (v * 0.3).exp());
            let p = p.scale(cfg.q_bar().mass() / p.mass());
            assert!(state_cost(&sp, &p, &cfg).value > -1e-12);
            let pl = steady_profile(
                &SteadyStateParams::new(rng.gen_range(0.5..2.0), rng.gen_range(-9.0..9.0), 0.5),
                &g,
            );
            let (_, _, l2) = setup(CostKind::L2, 0.2);
            assert!(state_cost(&sp, &pl, &l2).value >= 0.0);
            assert!(terminal_cost(&pl, &l2).value >= 0.0);
        }
    }

    #[test]
    fn control_cost_of_constant_control() {
        let (g, _, cfg) = setup(CostKind::L2, 0.2);
        let w = TimeWindow::new(0.0, 2.0, 0.01).unwrap();
        let q = Trajectory::constant(w, 1, cfg.q_i.clone()).unwrap();
        let c = 0.7;
        let a = Trajectory::constant(w, 1, VectorField::constant(g, &[c])).unwrap();
        let m = cfg.q_i.mass();
        assert!((control_cost(&q, &a) - 0.5 * c * c * m * 2.0).abs() < 1e-12);
        let z = Trajectory::constant(w, 1, VectorField::zeros(g)).unwrap();
        assert_eq!(control_cost(&q, &z), 0.0);
    }

    /// Time-dependent smooth trajectories for quadrature checks.
    fn moving(g: Grid, w: TimeWindow, stride: usize) -> (Trajectory<ScalarField>, Trajectory<VectorField>) {
        let frames = w.n_steps / stride + 1;
        let t_of = |i: usize| w.t_start + (i * stride) as f64 * w.dt;
        let q = (0..frames)
            .map(|i| {
                let t = t_of(i);
                steady_profile(&SteadyStateParams::new(1.0, -5.0 + t, 0.5), &g).map(|v| v + 0.01)
            })
            .collect();
        let a = (0..frames)
            .map(|i| {
                let t = t_of(i);
                VectorField::from_components(vec![ScalarField::from_fn(g, |x, _| (0.3 * x + t).sin())])
            })
            .collect();
        (
            Trajectory::new(w, stride, q).unwrap(),
            Trajectory::new(w, stride, a).unwrap(),
        )
    }

    #[test]
    fn total_costs_match_fine_time_quadrature() {
        for kind in [CostKind::L2, CostKind::Kl] {
            let (g, sp, cfg) = setup(kind, 0.2);
            let w = TimeWindow::new(0.0, 2.0, 1e-3).unwrap();
            let (q, a) = moving(g, w, 1);
            let b = total_cost_mfg2(&sp, &q, &a, &cfg);
            assert_eq!(b.total, b.terminal + b.running_state + b.running_control);
            // Simpson on the same samples is an independent higher-order oracle
            let simpson = |v: &[f64], h: f64| {
                let n = v.len() - 1;
                h / 3.0
                    * (v[0]
                        + v[n]
                        + (1..n)
                            .map(|i| if i % 2 == 1 { 4.0 * v[i] } else { 2.0 * v[i] })
                            .sum::<f64>())
            };
            let fs: Vec<f64> = q.frames().iter().map(|f| state_cost_value(&sp, f, &cfg).0).collect();
            let cs: Vec<f64> = q
                .frames()
                .iter()
                .zip(a.frames())
                .map(|(f, al)| control_density(f, al))
                .collect();
            let oracle = terminal_cost(q.last(), &cfg).value + simpson(&fs, w.dt) + simpson(&cs, w.dt);
            assert!(((b.total - oracle) / oracle).abs() < 1e-6, "{kind:?}");

            let rho = q.map(|f| f.map(|v| 0.5 * v + 0.02));
            let b1 = total_cost_mfg1(&sp, &rho, &a, &q, &cfg);
            let fw: Vec<f64> = (0..q.len())
                .map(|i| state_cost(&sp, q.frame(i), &cfg).derivative.dot(rho.frame(i)))
                .collect();
            let cw: Vec<f64> = (0..q.len())
                .map(|i| control_density(rho.frame(i), a.frame(i)))
                .collect();
            let o1 = terminal_cost(q.last(), &cfg).derivative.dot(rho.last()) + simpson(&fw, w.dt) + simpson(&cw, w.dt);
            assert!(((b1.total - o1) / o1.abs().max(1.0)).abs() < 1e-6, "{kind:?}");
        }
    }

    #[test]
    fn trivial_totals() {
        let (g, sp, _) = setup(CostKind::L2, 0.2);
        let q0 = steady_profile(&SteadyStateParams::new(1.0, 0.0, 0.5), &g);
        let cfg = CostConfig::new(CostKind::L2, 0.4, q0.clone(), q0.clone()).unwrap();
        let w = TimeWindow::new(0.0, 1.0, 0.1).unwrap();
        let q = Trajectory::constant(w, 1, q0.clone()).unwrap();
        let a = Trajectory::constant(w, 1, VectorField::zeros(g)).unwrap();
        assert!(total_cost_mfg2(&sp, &q, &a, &cfg).total.abs() < 1e-25);
        let f0 = Trajectory::constant(w, 1, ScalarField::zeros(g)).unwrap();
        assert_eq!(total_cost_mfg1_with(&q, &a, &f0, &ScalarField::zeros(g)).total, 0.0);
    }

    #[test]
    fn breakdown_serializes_with_named_fields() {
        let b = CostBreakdown::new(1.0, 2.0, 3.0);
        let v: serde_json::Value = serde_json::to_value(b).unwrap();
        for k in ["terminal", "running_state", "running_control", "total"] {
            assert!(v.get(k).is_some());
        }
        assert_eq!(v["total"], 6.0);
        assert!(v.get("clamped_nodes").is_none());
    }

    #[test]
    fn adjoint_derivative_smooths_only_kl() {
        let g = Grid::line(10.0, 64).unwrap();
        let sp = Spectral::new(g);
        let q = ScalarField::from_fn(g, |x, _| 1.1 + (0.314 * x).sin());
        let ripple = ScalarField::from_fn(g, |x, _| 2.0 + (std::f64::consts::PI * x / g.spacing() * 0.75).cos());
        let kl = CostConfig::new(CostKind::Kl, 0.5, q.clone(), q.clone()).unwrap();
        let l2 = CostConfig::new(CostKind::L2, 0.5, q.clone(), q.clone()).unwrap();
        assert_eq!(adjoint_derivative(&sp, ripple.clone(), &l2), ripple);
        let s = adjoint_derivative(&sp, ripple.clone(), &kl);
        assert!((s.mean() - 2.0).abs() < 1e-12);
        assert!(s.sub(&ScalarField::constant(g, 2.0)).max_abs() < 1e-3);
        let off = kl.with_derivative_smoothing(0.0).unwrap();
        assert_eq!(adjoint_derivative(&sp, ripple.clone(), &off), ripple);
        assert!(off.with_derivative_smoothing(-1.0).is_err());
    }
}
