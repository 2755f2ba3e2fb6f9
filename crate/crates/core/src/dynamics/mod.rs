//! Measure-driven state equations, the switch (adjoint) equations, event
//! location on dense output and the discounted objective.

pub mod export;
pub mod ode;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::Model;
use crate::numeric::{brent, BrentOptions, RootError};
pub use ode::{Direction, Event, EventHit, OdeError, OdeOptions, Solution};

/// Slack allowed on [0, x̄] before integration is declared broken.
pub const X_BREACH_TOL: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("integrator: {0}")]
    Step(#[from] OdeError),
    #[error("biomass left [0, x_bar] at t = {t}: x = {x}")]
    ConstraintBreach { t: f64, x: f64 },
    #[error("invalid impulse measure: {0}")]
    InvalidMeasure(String),
    #[error("invalid control trace: {0}")]
    InvalidControl(String),
    #[error("event function has no sign change on [{a}, {b}]")]
    NoSignChange { a: f64, b: f64 },
    #[error("stationary tail unavailable: final state is {distance:e} from the singular point")]
    TailUnavailable { distance: f64 },
    #[error("root refinement: {0}")]
    Root(RootError),
    #[error("trajectory has no adjoint channels")]
    NoAdjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct State {
    pub x: f64,
    #[serde(rename = "K")]
    pub k: f64,
}

impl State {
    pub fn new(x: f64, k: f64) -> Self {
        Self { x, k }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjointState {
    pub z: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Atom {
    pub t: f64,
    pub size: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DensityPiece {
    pub t0: f64,
    pub t1: f64,
    pub rate: f64,
}

/// Non-negative measure: finitely many atoms plus a piecewise-constant density.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ImpulseMeasure {
    pub atoms: Vec<Atom>,
    pub density: Vec<DensityPiece>,
}

impl ImpulseMeasure {
    pub fn new(atoms: Vec<Atom>, density: Vec<DensityPiece>) -> Result<Self, DynamicsError> {
        let m = Self { atoms, density };
        m.validate()?;
        Ok(m)
    }

    pub fn none() -> Self {
        Self::default()
    }

    pub fn atom(t: f64, size: f64) -> Result<Self, DynamicsError> {
        Self::new(vec![Atom { t, size }], vec![])
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        for a in &self.atoms {
            if !(a.size > 0.0 && a.size.is_finite()) || !(a.t >= 0.0 && a.t.is_finite()) {
                return Err(DynamicsError::InvalidMeasure(format!("bad atom {a:?}")));
            }
        }
        for w in self.atoms.windows(2) {
            if !(w[1].t > w[0].t) {
                return Err(DynamicsError::InvalidMeasure("atom times must increase strictly".into()));
            }
        }
        for d in &self.density {
            if !(d.rate >= 0.0 && d.rate.is_finite()) || !(d.t1 > d.t0) || !(d.t0 >= 0.0) {
                return Err(DynamicsError::InvalidMeasure(format!("bad density piece {d:?}")));
            }
        }
        for w in self.density.windows(2) {
            if w[1].t0 < w[0].t1 {
                return Err(DynamicsError::InvalidMeasure("density pieces overlap".into()));
            }
        }
        Ok(())
    }

    pub fn rate_at(&self, t: f64) -> f64 {
        self.density
            .iter()
            .find(|d| t >= d.t0 && t < d.t1)
            .map_or(0.0, |d| d.rate)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ControlMode {
    Zero,
    One,
    /// u = F(x̃)/(x̃K), capped at 1; holds x at x̃.
    SingularTilde,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControlPiece {
    pub t0: f64,
    pub t1: f64,
    pub mode: ControlMode,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct ControlTrace {
    pub pieces: Vec<ControlPiece>,
}

impl ControlTrace {
    pub fn constant(mode: ControlMode, horizon: f64) -> Self {
        Self {
            pieces: vec![ControlPiece { t0: 0.0, t1: horizon, mode }],
        }
    }

    /// `first` on [0, switch), `second` on [switch, horizon].
    pub fn switched(first: ControlMode, switch: f64, second: ControlMode, horizon: f64) -> Self {
        let mut pieces = Vec::new();
        if switch > 0.0 {
            pieces.push(ControlPiece { t0: 0.0, t1: switch.min(horizon), mode: first });
        }
        if switch < horizon {
            pieces.push(ControlPiece { t0: switch.max(0.0), t1: horizon, mode: second });
        }
        Self { pieces }
    }

    pub fn mode_at(&self, t: f64) -> Option<ControlMode> {
        self.pieces
            .iter()
            .find(|p| t >= p.t0 && t < p.t1)
            .or_else(|| self.pieces.last().filter(|p| t == p.t1))
            .map(|p| p.mode)
    }

    fn validate(&self, horizon: f64) -> Result<(), DynamicsError> {
        let first = self
            .pieces
            .first()
            .ok_or_else(|| DynamicsError::InvalidControl("empty control trace".into()))?;
        if first.t0 > 0.0 {
            return Err(DynamicsError::InvalidControl("trace must start at t = 0".into()));
        }
        for w in self.pieces.windows(2) {
            if w[1].t0 != w[0].t1 {
                return Err(DynamicsError::InvalidControl("pieces must be contiguous".into()));
            }
        }
        if self.pieces.iter().any(|p| !(p.t1 > p.t0)) {
            return Err(DynamicsError::InvalidControl("empty piece".into()));
        }
        if self.pieces.last().unwrap().t1 < horizon {
            return Err(DynamicsError::InvalidControl(format!("trace ends before horizon {horizon}")));
        }
        Ok(())
    }
}

/// Effort level for a control mode at capital `k`.
pub fn control_value(model: &Model, mode: ControlMode, k: f64) -> f64 {
    match mode {
        ControlMode::Zero => 0.0,
        ControlMode::One => 1.0,
        ControlMode::SingularTilde => {
            let c = &model.constants;
            if k <= 0.0 {
                1.0
            } else {
                (c.k_tilde / k).min(1.0)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct JumpRecord {
    pub t: f64,
    /// Exact atom size; K_plus − K_minus can lose the last bit.
    #[serde(skip)]
    pub size: f64,
    #[serde(rename = "K_minus")]
    pub k_minus: f64,
    #[serde(rename = "K_plus")]
    pub k_plus: f64,
}

/// One smooth stretch between atoms / control switches. State channels are
/// (x, K, J_running).
#[derive(Debug, Clone)]
pub struct Segment {
    pub t0: f64,
    pub t1: f64,
    pub mode: ControlMode,
    pub density: f64,
    pub state: Solution<3>,
    pub adjoint: Option<Solution<2>>,
}

impl Segment {
    pub fn start(&self) -> [f64; 3] {
        self.state.y_start
    }

    pub fn end(&self) -> [f64; 3] {
        self.state.y_end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub t: f64,
    pub x: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub u: f64,
    pub z: f64,
    pub lambda: f64,
    pub j_running: f64,
}

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub model: Model,
    pub initial: State,
    pub segments: Vec<Segment>,
    pub jumps: Vec<JumpRecord>,
}

impl Trajectory {
    pub fn new(model: Model, initial: State) -> Self {
        Self {
            model,
            initial,
            segments: Vec::new(),
            jumps: Vec::new(),
        }
    }

    pub fn t_end(&self) -> f64 {
        self.segments.last().map_or(0.0, |s| s.t1)
    }

    /// (x, K, J) at the end of the trajectory, after any trailing atom.
    pub fn end_values(&self) -> [f64; 3] {
        match (self.segments.last(), self.jumps.last()) {
            (Some(s), Some(j)) if j.t > s.t1 || (j.t == s.t1 && s.t1 > s.t0) => {
                let mut v = s.end();
                v[1] = j.k_plus;
                v
            }
            (Some(s), _) => s.end(),
            (None, _) => {
                let k = self.jumps.last().map_or(self.initial.k, |j| j.k_plus);
                [self.initial.x, k, 0.0]
            }
        }
    }

    pub fn final_state(&self) -> State {
        let v = self.end_values();
        State::new(v[0], v[1])
    }

    pub fn has_adjoint(&self) -> bool {
        !self.segments.is_empty() && self.segments.iter().all(|s| s.adjoint.is_some())
    }

    /// Right-continuous segment lookup.
    pub fn segment_at(&self, t: f64) -> Option<&Segment> {
        let idx = self.segments.partition_point(|s| s.t1 <= t);
        self.segments
            .get(idx)
            .filter(|s| t >= s.t0)
            .or_else(|| self.segments.last().filter(|s| t == s.t1))
    }

    pub fn state_at(&self, t: f64) -> Option<[f64; 3]> {
        self.segment_at(t).map(|s| s.state.eval(t))
    }

    pub fn sample(&self, t: f64) -> Option<Sample> {
        let seg = self.segment_at(t)?;
        let y = seg.state.eval(t);
        let (z, lambda) = match &seg.adjoint {
            Some(a) => {
                let v = a.eval(t);
                (v[0], v[1])
            }
            None => (f64::NAN, f64::NAN),
        };
        Some(Sample {
            t,
            x: y[0],
            k: y[1],
            u: control_value(&self.model, seg.mode, y[1]),
            z,
            lambda,
            j_running: y[2],
        })
    }

    /// Running objective at the horizon end of the trajectory.
    pub fn running_objective(&self) -> f64 {
        self.end_values()[2]
    }

    /// Segment boundaries, atom times and a uniform grid of spacing `dt`.
    pub fn sample_times(&self, dt: f64) -> Vec<f64> {
        let t_end = self.t_end();
        let mut ts: Vec<f64> = Vec::new();
        if dt > 0.0 {
            let n = (t_end / dt).floor() as usize;
            ts.extend((0..=n).map(|i| i as f64 * dt).filter(|&t| t <= t_end));
        }
        for s in &self.segments {
            ts.push(s.t0);
            ts.push(s.t1);
        }
        ts.extend(self.jumps.iter().map(|j| j.t).filter(|&t| t <= t_end));
        ts.sort_by(|a, b| a.partial_cmp(b).unwrap());
        ts.dedup_by(|a, b| (*a - *b).abs() <= 1e-12 * b.abs().max(1.0));
        ts
    }

    pub fn samples(&self, dt: f64) -> Vec<Sample> {
        self.sample_times(dt)
            .into_iter()
            .filter_map(|t| self.sample(t))
            .collect()
    }

    /// The realized open-loop control.
    pub fn control_trace(&self) -> ControlTrace {
        let mut pieces: Vec<ControlPiece> = Vec::new();
        for s in self.segments.iter().filter(|s| s.t1 > s.t0) {
            match pieces.last_mut() {
                Some(last) if last.mode == s.mode && last.t1 == s.t0 => last.t1 = s.t1,
                _ => pieces.push(ControlPiece { t0: s.t0, t1: s.t1, mode: s.mode }),
            }
        }
        ControlTrace { pieces }
    }

    /// The realized investment measure.
    pub fn measure(&self) -> ImpulseMeasure {
        let atoms = self
            .jumps
            .iter()
            .map(|j| Atom {
                t: j.t,
                size: if j.size > 0.0 { j.size } else { j.k_plus - j.k_minus },
            })
            .filter(|a| a.size > 0.0)
            .collect();
        let mut density: Vec<DensityPiece> = Vec::new();
        for s in self.segments.iter().filter(|s| s.density > 0.0 && s.t1 > s.t0) {
            match density.last_mut() {
                Some(last) if last.rate == s.density && last.t1 == s.t0 => last.t1 = s.t1,
                _ => density.push(DensityPiece { t0: s.t0, t1: s.t1, rate: s.density }),
            }
        }
        ImpulseMeasure { atoms, density }
    }

    /// Appends an atom at time `t`, updating capital and the running objective.
    pub fn apply_atom(&mut self, t: f64, y: &mut [f64; 3], size: f64) {
        let p = &self.model.params;
        let k_minus = y[1];
        y[1] += size;
        y[2] += p.r * size * (-p.delta * t).exp();
        self.jumps.push(JumpRecord { t, size, k_minus, k_plus: y[1] });
    }
}

/// Right-hand side of (x, K, J) under a fixed mode and density.
pub fn state_rhs(model: &Model, mode: ControlMode, density: f64) -> impl Fn(f64, &[f64; 3]) -> [f64; 3] + '_ {
    let p = model.params;
    let c = model.constants;
    move |t, y| {
        let (x, k) = (y[0], y[1]);
        let harvest_effort = match mode {
            ControlMode::Zero => 0.0,
            ControlMode::One => k,
            ControlMode::SingularTilde => k.min(c.k_tilde).max(0.0),
        };
        let dx = p.production.f(x) - harvest_effort * x;
        let dk = -p.gamma * k + density;
        let dj = (-p.delta * t).exp() * (p.r * density + (p.c - p.p * x) * harvest_effort);
        [dx, dk, dj]
    }
}

fn check_breach(model: &Model, sol: &Solution<3>) -> Result<(), DynamicsError> {
    let x_bar = model.x_bar();
    let bad = |x: f64| x < -X_BREACH_TOL || x > x_bar + X_BREACH_TOL || !x.is_finite();
    for s in &sol.steps {
        let y = s.y1();
        if bad(y[0]) {
            return Err(DynamicsError::ConstraintBreach { t: s.t1(), x: y[0] });
        }
    }
    if bad(sol.y_end[0]) {
        return Err(DynamicsError::ConstraintBreach { t: sol.t_end, x: sol.y_end[0] });
    }
    Ok(())
}

/// Integrates one segment from `t0` toward `t1` under a fixed mode, stopping
/// early at the first terminal event. Events see (t, [x, K, J]).
pub fn integrate_segment(
    model: &Model,
    y0: [f64; 3],
    t0: f64,
    t1: f64,
    mode: ControlMode,
    density: f64,
    opts: &OdeOptions,
    events: &mut [Event<'_, 3>],
) -> Result<Segment, DynamicsError> {
    let x_bar = model.x_bar();
    let mut y0 = y0;
    y0[0] = y0[0].clamp(0.0, x_bar);
    let sol = ode::integrate(state_rhs(model, mode, density), t0, y0, t1, opts, events)?;
    check_breach(model, &sol)?;
    Ok(Segment {
        t0,
        t1: sol.t_end,
        mode,
        density,
        state: sol,
        adjoint: None,
    })
}

/// Integrates the state under a prescribed open-loop control and measure.
/// Capital is right-continuous: an atom at t = 0 is already included in K(0).
pub fn integrate_state(
    model: &Model,
    initial: State,
    control: &ControlTrace,
    measure: &ImpulseMeasure,
    horizon: f64,
    opts: &OdeOptions,
) -> Result<Trajectory, DynamicsError> {
    if !(horizon > 0.0) {
        return Err(DynamicsError::InvalidControl(format!("horizon {horizon} must be > 0")));
    }
    measure.validate()?;
    control.validate(horizon)?;

    let mut cuts: Vec<f64> = vec![0.0, horizon];
    cuts.extend(control.pieces.iter().flat_map(|p| [p.t0, p.t1]));
    cuts.extend(measure.density.iter().flat_map(|d| [d.t0, d.t1]));
    cuts.extend(measure.atoms.iter().map(|a| a.t));
    cuts.retain(|&t| (0.0..=horizon).contains(&t));
    cuts.sort_by(|a, b| a.partial_cmp(b).unwrap());
    cuts.dedup();

    let mut traj = Trajectory::new(*model, initial);
    let mut y = [initial.x, initial.k, 0.0];
    let mut atoms = measure.atoms.iter().peekable();
    for w in cuts.windows(2) {
        let (a, b) = (w[0], w[1]);
        while let Some(atom) = atoms.next_if(|at| at.t <= a) {
            traj.apply_atom(atom.t, &mut y, atom.size);
        }
        let mid = 0.5 * (a + b);
        let mode = control
            .mode_at(mid)
            .ok_or_else(|| DynamicsError::InvalidControl(format!("no control at t = {mid}")))?;
        let seg = integrate_segment(model, y, a, b, mode, measure.rate_at(mid), opts, &mut [])?;
        y = seg.end();
        traj.segments.push(seg);
    }
    // An atom exactly at the horizon still counts.
    while let Some(atom) = atoms.next_if(|at| at.t <= horizon) {
        traj.apply_atom(atom.t, &mut y, atom.size);
    }
    Ok(traj)
}

fn adjoint_rhs<'a>(model: &'a Model, seg: &'a Segment) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] + 'a {
    let kappa = model.constants.kappa;
    move |t, w| {
        let y = seg.state.eval(t);
        let x = y[0];
        let u = control_value(model, seg.mode, y[1]);
        [w[0] * model.g(x) - model.psi(x), kappa * w[1] - w[0] * u]
    }
}

/// Fills z, λ forward from their values at t = 0. z and λ are continuous
/// across atoms. Forward z is exponentially unstable, so this suits short
/// horizons and identity checks; see [`integrate_adjoint_backward`].
pub fn integrate_adjoint(
    traj: &Trajectory,
    z0: f64,
    lambda0: f64,
    opts: &OdeOptions,
) -> Result<Trajectory, DynamicsError> {
    let mut out = traj.clone();
    let mut w = [z0, lambda0];
    for i in 0..out.segments.len() {
        let seg = &traj.segments[i];
        let sol = ode::integrate(adjoint_rhs(&traj.model, seg), seg.t0, w, seg.t1, opts, &mut [])?;
        w = sol.y_end;
        out.segments[i].adjoint = Some(sol);
    }
    Ok(out)
}

/// Fills z, λ by integrating backward from their values at the trajectory
/// end. This is the stable direction for both switch equations.
pub fn integrate_adjoint_backward(
    traj: &Trajectory,
    z_end: f64,
    lambda_end: f64,
    opts: &OdeOptions,
) -> Result<Trajectory, DynamicsError> {
    let mut out = traj.clone();
    let mut w = [z_end, lambda_end];
    for i in (0..out.segments.len()).rev() {
        let seg = &traj.segments[i];
        let sol = ode::integrate(adjoint_rhs(&traj.model, seg), seg.t1, w, seg.t0, opts, &mut [])?;
        w = sol.y_end;
        out.segments[i].adjoint = Some(sol);
    }
    Ok(out)
}

/// Both algebraic forms of the switch right-hand sides at one sample.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SwitchForms {
    pub z_direct: f64,
    pub z_shifted: f64,
    pub lambda_shifted: f64,
    pub lambda_direct: f64,
}

pub fn switch_forms(model: &Model, x: f64, u: f64, z: f64, lambda: f64) -> SwitchForms {
    let c = &model.constants;
    let r = model.params.r;
    SwitchForms {
        z_direct: z * model.g(x) - model.psi(x),
        z_shifted: (z - c.r_prime) * model.g(x) - model.psi_star(x),
        lambda_shifted: (lambda - r) * c.kappa - z * u + c.r_prime,
        lambda_direct: c.kappa * lambda - z * u,
    }
}

/// Locates a root of `event_fn` on `[a, b]` using the dense output.
pub fn detect_event<E>(traj: &Trajectory, mut event_fn: E, a: f64, b: f64) -> Result<f64, DynamicsError>
where
    E: FnMut(&Sample) -> f64,
{
    let mut eval = |t: f64| -> Result<f64, RootError> {
        let s = traj.sample(t).ok_or(RootError::Evaluation {
            at: t,
            reason: "outside trajectory".into(),
        })?;
        Ok(event_fn(&s))
    };
    let fa = eval(a).map_err(DynamicsError::Root)?;
    let fb = eval(b).map_err(DynamicsError::Root)?;
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(DynamicsError::NoSignChange { a, b });
    }
    // A few bisection steps first so Brent starts on a tight bracket.
    let (mut lo, mut hi, mut flo) = (a, b, fa);
    for _ in 0..8 {
        let mid = 0.5 * (lo + hi);
        let fm = eval(mid).map_err(DynamicsError::Root)?;
        if fm == 0.0 {
            return Ok(mid);
        }
        if fm.signum() == flo.signum() {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    let opts = BrentOptions::default().with_x_tol(1e-13).with_f_tol(f64::MIN_POSITIVE);
    brent(eval, lo, hi, opts).map_err(DynamicsError::Root)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum TailRule {
    Zero,
    /// Closed-form stationary value once within `eps` of (x*, K*).
    Stationary { eps: f64 },
}

impl TailRule {
    pub fn stationary() -> Self {
        TailRule::Stationary { eps: 1e-6 }
    }
}

/// Running objective up to `horizon` plus the chosen tail.
pub fn evaluate_objective(traj: &Trajectory, horizon: f64, tail: TailRule) -> Result<f64, DynamicsError> {
    let m = &traj.model;
    let h = horizon.min(traj.t_end());
    let running = if h >= traj.t_end() {
        traj.running_objective()
    } else {
        traj.state_at(h).map_or(0.0, |y| y[2])
    };
    match tail {
        TailRule::Zero => Ok(running),
        TailRule::Stationary { eps } => {
            let y = if h >= traj.t_end() {
                traj.end_values()
            } else {
                traj.state_at(h).unwrap_or([traj.initial.x, traj.initial.k, 0.0])
            };
            let c = &m.constants;
            let distance = (y[0] - c.x_star).hypot(y[1] - c.k_star);
            if distance > eps {
                return Err(DynamicsError::TailUnavailable { distance });
            }
            Ok(running + (-m.params.delta * h).exp() * m.stationary_value())
        }
    }
}

/// Upper bound on |∫_H^∞ e^{−δt}(r·density + (c − px)uK) dt| for capital
/// bounded by `k_max` and density bounded by `density_max`.
pub fn tail_bound(model: &Model, horizon: f64, k_max: f64, density_max: f64) -> f64 {
    let p = &model.params;
    (-p.delta * horizon).exp() * (p.r * density_max + (p.p * model.x_bar() + p.c) * k_max) / p.delta
}
