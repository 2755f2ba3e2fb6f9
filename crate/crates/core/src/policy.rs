//! Region classification, feedback schedule synthesis and closed-loop rollout.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::{CurveError, PhasePortrait};
use crate::dynamics::{
    integrate_adjoint_backward, integrate_segment, ode, ControlMode, ControlTrace, Direction, DynamicsError, Event,
    ImpulseMeasure, OdeOptions, Segment, State, TailRule, Trajectory,
};

/// Half-width of the band in which a point counts as lying on a curve.
pub const CURVE_BAND: f64 = 1e-8;

/// Default rollout horizon.
pub const DEFAULT_HORIZON: f64 = 40.0;

#[derive(Debug, Error)]
pub enum PolicyError {
    #[error("unsupported initial state ({x}, {k}): {reason}")]
    Unsupported { x: f64, k: f64, reason: String },
    #[error("phase {phase} never reached its target before t = {horizon}; closest approach {closest:e}")]
    EventMiss { phase: String, horizon: f64, closest: f64 },
    #[error("dynamics: {0}")]
    Dynamics(#[from] DynamicsError),
    #[error("integrator: {0}")]
    Ode(#[from] ode::OdeError),
    #[error("curves: {0}")]
    Curve(#[from] CurveError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Region {
    R1,
    R2,
    R3,
    R4,
    R5,
    SigmaStar,
    SigmaTilde,
    Sigma0,
    SigmaS,
    Gamma3,
    Gamma4,
    SingularPoint,
    SingularTilde,
    Boundary,
    Unsupported,
}

impl Region {
    pub const ALL: [Region; 15] = [
        Region::R1,
        Region::R2,
        Region::R3,
        Region::R4,
        Region::R5,
        Region::SigmaStar,
        Region::SigmaTilde,
        Region::Sigma0,
        Region::SigmaS,
        Region::Gamma3,
        Region::Gamma4,
        Region::SingularPoint,
        Region::SingularTilde,
        Region::Boundary,
        Region::Unsupported,
    ];

    pub fn tag(self) -> &'static str {
        match self {
            Region::R1 => "R1",
            Region::R2 => "R2",
            Region::R3 => "R3",
            Region::R4 => "R4",
            Region::R5 => "R5",
            Region::SigmaStar => "SigmaStar",
            Region::SigmaTilde => "SigmaTilde",
            Region::Sigma0 => "Sigma0",
            Region::SigmaS => "SigmaS",
            Region::Gamma3 => "Gamma3",
            Region::Gamma4 => "Gamma4",
            Region::SingularPoint => "SingularPoint",
            Region::SingularTilde => "SingularTilde",
            Region::Boundary => "Boundary",
            Region::Unsupported => "Unsupported",
        }
    }

    /// True for the open regions, false for curves and special points.
    pub fn is_open(self) -> bool {
        matches!(self, Region::R1 | Region::R2 | Region::R3 | Region::R4 | Region::R5)
    }
}

impl fmt::Display for Region {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.tag())
    }
}

/// Which region contains (x, K). Curves win over open regions inside a band
/// of half-width [`CURVE_BAND`].
pub fn classify(portrait: &PhasePortrait, x: f64, k: f64) -> Region {
    let sp = &portrait.specials;
    let x_bar = portrait.model.x_bar();
    if !x.is_finite() || !k.is_finite() || x < 0.0 || x > x_bar || k < 0.0 {
        return Region::Unsupported;
    }
    if x == 0.0 || x == x_bar {
        return Region::Boundary;
    }
    let band = CURVE_BAND;
    let near = |a: f64, b: f64| (a - b).abs() <= band;

    if near(x, sp.x_star) {
        if near(k, sp.k_star) {
            return Region::SingularPoint;
        }
        if k < sp.k_star {
            return Region::SigmaStar;
        }
    }
    if near(x, sp.x_tilde) {
        if near(k, sp.k_dtilde) {
            return Region::SingularTilde;
        }
        if k > sp.k_dtilde {
            return Region::SigmaTilde;
        }
    }

    if x > sp.x_star {
        let Ok(hs) = portrait.hs.eval(x) else {
            // Past the end of Σₛ when it stops short of x̄.
            return Region::Unsupported;
        };
        if near(k, hs) {
            return Region::SigmaS;
        }
        if k < hs {
            return Region::R1;
        }
        return above_gamma3(portrait, x, k);
    }
    if x >= sp.x_tilde {
        return above_gamma3(portrait, x, k);
    }

    // Left of Σ̃.
    if k <= sp.k_dtilde {
        let Ok(xs0) = portrait.s0.eval(k) else {
            return Region::Unsupported;
        };
        if near(x, xs0) {
            return Region::Sigma0;
        }
        return if x < xs0 { Region::R3 } else { Region::R2 };
    }
    let Ok(k4) = portrait.gamma4_k(x) else {
        return Region::Unsupported;
    };
    if near(k, k4) {
        Region::Gamma4
    } else if k < k4 {
        Region::R3
    } else {
        Region::R4
    }
}

fn above_gamma3(portrait: &PhasePortrait, x: f64, k: f64) -> Region {
    match portrait.h3.eval(x) {
        Ok(k3) if (k - k3).abs() <= CURVE_BAND => Region::Gamma3,
        Ok(k3) if k < k3 => Region::R2,
        Ok(_) => Region::R5,
        Err(_) => Region::Unsupported,
    }
}

/// What a phase runs until.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Target {
    /// x reaches x*.
    SigmaStar,
    /// x reaches x̃.
    SigmaTilde,
    /// The moratorium flow meets Σ₀.
    Sigma0,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "phase")]
pub enum Phase {
    JumpTo {
        #[serde(rename = "K_plus")]
        k_plus: f64,
    },
    BangOne {
        until: Target,
    },
    Moratorium {
        until: Target,
    },
    /// Harvest effort K̃ on x = x̃ while K decays to K̃̃.
    SingularTildeArc,
    StationaryForever,
}

impl Phase {
    pub fn name(&self) -> &'static str {
        match self {
            Phase::JumpTo { .. } => "JumpTo",
            Phase::BangOne { .. } => "BangOne",
            Phase::Moratorium { .. } => "Moratorium",
            Phase::SingularTildeArc => "SingularTildeArc",
            Phase::StationaryForever => "StationaryForever",
        }
    }
}

/// Expected sign or value of a switch function at t = 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Relation {
    Positive,
    Negative,
    Zero,
    /// z > r′.
    AboveRPrime,
    /// z = r′.
    EqualsRPrime,
    /// λ = r.
    EqualsR,
    /// λ < r.
    BelowR,
    /// λ = λ̃.
    EqualsLambdaTilde,
}

impl Relation {
    /// Whether `v` satisfies the relation within `tol`.
    pub fn holds(self, v: f64, r_prime: f64, r: f64, lambda_tilde: f64, tol: f64) -> bool {
        match self {
            Relation::Positive => v > -tol,
            Relation::Negative => v < tol,
            Relation::Zero => v.abs() <= tol,
            Relation::AboveRPrime => v > r_prime - tol,
            Relation::EqualsRPrime => (v - r_prime).abs() <= tol,
            Relation::EqualsR => (v - r).abs() <= tol,
            Relation::BelowR => v < r + tol,
            Relation::EqualsLambdaTilde => (v - lambda_tilde).abs() <= tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjointExpectation {
    pub z0: Relation,
    pub lambda0: Relation,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PolicySchedule {
    pub region: Region,
    pub initial: State,
    pub phases: Vec<Phase>,
    pub expected: AdjointExpectation,
}

impl PolicySchedule {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("schedule serializes")
    }
}

/// Builds the optimal feedback schedule from (x₀, K₀).
pub fn synthesize(portrait: &PhasePortrait, x0: f64, k0: f64) -> Result<PolicySchedule, PolicyError> {
    use Phase::*;
    use Relation::*;
    let sp = &portrait.specials;
    let region = classify(portrait, x0, k0);
    let capture = [BangOne { until: Target::SigmaStar }, JumpTo { k_plus: sp.k_star }, StationaryForever];
    let singular = |lead: Option<Phase>| -> Vec<Phase> {
        lead.into_iter().chain([SingularTildeArc]).chain(capture).collect()
    };
    let expect = |z0, lambda0| AdjointExpectation { z0, lambda0 };

    let (phases, expected) = match region {
        Region::SingularPoint => (vec![StationaryForever], expect(EqualsRPrime, EqualsR)),
        Region::SigmaStar => (vec![JumpTo { k_plus: sp.k_star }, StationaryForever], expect(EqualsRPrime, EqualsR)),
        Region::R2 => (capture.to_vec(), expect(Positive, BelowR)),
        Region::Gamma3 => (capture.to_vec(), expect(Positive, BelowR)),
        Region::Sigma0 => (capture.to_vec(), expect(Zero, BelowR)),
        Region::SingularTilde => (capture.to_vec(), expect(Zero, EqualsLambdaTilde)),
        Region::R3 => {
            let mut v = vec![Moratorium { until: Target::Sigma0 }];
            v.extend(capture);
            (v, expect(Negative, BelowR))
        }
        Region::R4 => (singular(Some(Moratorium { until: Target::SigmaTilde })), expect(Negative, BelowR)),
        Region::Gamma4 => (singular(Some(Moratorium { until: Target::SigmaTilde })), expect(Negative, BelowR)),
        Region::R5 => (singular(Some(BangOne { until: Target::SigmaTilde })), expect(Positive, BelowR)),
        Region::SigmaTilde => (singular(None), expect(Zero, BelowR)),
        Region::SigmaS if portrait.on_second_family(x0) => {
            (singular(Some(BangOne { until: Target::SigmaTilde })), expect(AboveRPrime, EqualsR))
        }
        Region::SigmaS => (capture.to_vec(), expect(AboveRPrime, EqualsR)),
        Region::R1 => {
            let (k_plus, _) = portrait.hs_exact(x0)?;
            let mut v = vec![JumpTo { k_plus }];
            if portrait.on_second_family(x0) {
                v.extend(singular(Some(BangOne { until: Target::SigmaTilde })));
            } else {
                v.extend(capture);
            }
            (v, expect(AboveRPrime, EqualsR))
        }
        Region::Boundary | Region::Unsupported => {
            return Err(PolicyError::Unsupported {
                x: x0,
                k: k0,
                reason: format!("classified as {region}"),
            })
        }
    };
    Ok(PolicySchedule {
        region,
        initial: State::new(x0, k0),
        phases,
        expected,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhaseSpan {
    pub phase: Phase,
    pub t0: f64,
    pub t1: f64,
}

#[derive(Debug, Clone, Copy)]
pub struct RolloutOptions {
    pub horizon: f64,
    /// Fill z, λ by backward integration from (r′, r) at the horizon.
    pub adjoint: bool,
    pub ode: OdeOptions,
}

impl Default for RolloutOptions {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            adjoint: true,
            ode: OdeOptions::default().event_samples(4),
        }
    }
}

impl RolloutOptions {
    pub fn value_only(horizon: f64) -> Self {
        Self {
            horizon,
            adjoint: false,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct Rollout {
    pub schedule: PolicySchedule,
    pub trajectory: Trajectory,
    pub spans: Vec<PhaseSpan>,
    pub horizon: f64,
    pub value: f64,
}

/// Open-loop record of a rollout, enough to replay it without the portrait.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct RealizedPolicy {
    pub initial: State,
    pub horizon: f64,
    pub control: ControlTrace,
    pub measure: ImpulseMeasure,
    pub tail: TailRule,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ScheduleFile {
    #[serde(flatten)]
    pub schedule: PolicySchedule,
    pub spans: Vec<PhaseSpan>,
    pub value: f64,
    pub realized: RealizedPolicy,
}

impl Rollout {
    pub fn realized(&self) -> RealizedPolicy {
        RealizedPolicy {
            initial: self.schedule.initial,
            horizon: self.horizon,
            control: self.trajectory.control_trace(),
            measure: self.trajectory.measure(),
            tail: TailRule::stationary(),
        }
    }

    pub fn schedule_file(&self) -> ScheduleFile {
        ScheduleFile {
            schedule: self.schedule.clone(),
            spans: self.spans.clone(),
            value: self.value,
            realized: self.realized(),
        }
    }
}

/// Runs the feedback schedule from (x₀, K₀).
pub fn rollout(portrait: &PhasePortrait, x0: f64, k0: f64, opts: &RolloutOptions) -> Result<Rollout, PolicyError> {
    let schedule = synthesize(portrait, x0, k0)?;
    run_schedule(portrait, schedule, opts)
}

/// Optimal value V(x, K) via a rollout without the adjoint.
pub fn value(portrait: &PhasePortrait, x: f64, k: f64, horizon: f64) -> Result<f64, PolicyError> {
    Ok(rollout(portrait, x, k, &RolloutOptions::value_only(horizon))?.value)
}

fn target_event<'a>(portrait: &'a PhasePortrait, target: Target) -> Event<'a, 3> {
    let sp = &portrait.specials;
    match target {
        Target::SigmaStar => {
            // Below K* the biomass grows through x*; a falling crossing is
            // above Σ* and does not count.
            let xs = sp.x_star;
            Event::terminal(move |_, y: &[f64; 3]| y[0] - xs, Direction::Rising)
        }
        Target::SigmaTilde => {
            let xt = sp.x_tilde;
            Event::terminal(move |_, y: &[f64; 3]| y[0] - xt, Direction::Either)
        }
        Target::Sigma0 => {
            let kd = sp.k_dtilde;
            let s0 = &portrait.s0;
            Event::terminal(
                move |_, y: &[f64; 3]| {
                    let k = y[1].clamp(0.0, kd);
                    y[0] - s0.eval(k).unwrap_or(sp.x_tilde)
                },
                Direction::Rising,
            )
        }
    }
}

fn closest_approach(portrait: &PhasePortrait, target: Target, seg: &Segment) -> f64 {
    let mut ev = target_event(portrait, target);
    let mut best = f64::INFINITY;
    for s in &seg.state.steps {
        best = best.min(ev.value_at(s.t1(), &s.y1()).abs());
    }
    best
}

/// Executes an explicit schedule. Each event phase must reach its target
/// before the horizon.
pub fn run_schedule(portrait: &PhasePortrait, schedule: PolicySchedule, opts: &RolloutOptions) -> Result<Rollout, PolicyError> {
    let model = &portrait.model;
    let sp = &portrait.specials;
    let horizon = opts.horizon;
    let mut traj = Trajectory::new(*model, schedule.initial);
    let mut spans = Vec::with_capacity(schedule.phases.len());
    let mut y = [schedule.initial.x, schedule.initial.k, 0.0];
    let mut t = 0.0;

    for phase in &schedule.phases {
        let t_start = t;
        match *phase {
            Phase::JumpTo { k_plus } => {
                let size = k_plus - y[1];
                if size > 0.0 {
                    traj.apply_atom(t, &mut y, size);
                }
            }
            Phase::BangOne { until } | Phase::Moratorium { until } => {
                let mode = if matches!(phase, Phase::BangOne { .. }) {
                    ControlMode::One
                } else {
                    ControlMode::Zero
                };
                let mut events = [target_event(portrait, until)];
                let seg = integrate_segment(model, y, t, horizon, mode, 0.0, &opts.ode, &mut events)?;
                if !seg.state.stopped {
                    return Err(PolicyError::EventMiss {
                        phase: format!("{}({:?})", phase.name(), until),
                        horizon,
                        closest: closest_approach(portrait, until, &seg),
                    });
                }
                y = seg.end();
                t = seg.t1;
                traj.segments.push(seg);
            }
            Phase::SingularTildeArc => {
                if y[1] > sp.k_dtilde {
                    let kd = sp.k_dtilde;
                    let mut events = [Event::terminal(move |_, y: &[f64; 3]| y[1] - kd, Direction::Falling)];
                    let seg =
                        integrate_segment(model, y, t, horizon, ControlMode::SingularTilde, 0.0, &opts.ode, &mut events)?;
                    if !seg.state.stopped {
                        return Err(PolicyError::EventMiss {
                            phase: phase.name().into(),
                            horizon,
                            closest: seg.end()[1] - kd,
                        });
                    }
                    y = seg.end();
                    t = seg.t1;
                    traj.segments.push(seg);
                }
            }
            Phase::StationaryForever => {
                if t < horizon {
                    let density = model.params.gamma * sp.k_star;
                    let seg = integrate_segment(model, y, t, horizon, ControlMode::One, density, &opts.ode, &mut [])?;
                    y = seg.end();
                    t = seg.t1;
                    traj.segments.push(seg);
                }
            }
        }
        spans.push(PhaseSpan {
            phase: *phase,
            t0: t_start,
            t1: t,
        });
    }

    let value = crate::dynamics::evaluate_objective(&traj, horizon, TailRule::stationary())?;
    if opts.adjoint {
        let c = &model.constants;
        traj = integrate_adjoint_backward(&traj, c.r_prime, model.params.r, &opts.ode)?;
    }
    Ok(Rollout {
        schedule,
        trajectory: traj,
        spans,
        horizon,
        value,
    })
}
