//! Necessary-condition checks along rollouts, perturbation dominance and a
//! brute-force policy oracle.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::curves::PhasePortrait;
use crate::dynamics::{
    evaluate_objective, integrate_segment, integrate_state, tail_bound, Atom, ControlMode, ControlTrace, DensityPiece,
    Direction, DynamicsError, Event, ImpulseMeasure, OdeOptions, State, TailRule, Trajectory,
};
use crate::model::Model;
use crate::numeric::linspace;
use crate::policy::{
    classify, rollout, value, AdjointExpectation, Phase, PolicyError, Region, Rollout, RolloutOptions, Target,
};

/// Tolerance on every necessary-condition residual.
pub const CONDITION_TOL: f64 = 1e-6;
/// Dead band around z = 0 inside which the control is not checked.
pub const Z_BAND: f64 = 1e-6;
/// Slack allowed when comparing a perturbed value to the baseline.
pub const DOMINANCE_TOL: f64 = 1e-6;

#[derive(Debug, Error)]
pub enum VerifyError {
    #[error("policy: {0}")]
    Policy(#[from] PolicyError),
    #[error("dynamics: {0}")]
    Dynamics(#[from] DynamicsError),
    #[error("trajectory carries no adjoint")]
    NoAdjoint,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ArrivalCheck {
    pub t: f64,
    pub z: f64,
    pub lambda: f64,
    pub dz: f64,
    pub dlambda: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct InitCheck {
    pub expected: AdjointExpectation,
    pub z0: f64,
    pub lambda0: f64,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionReport {
    pub region: Region,
    pub x0: f64,
    #[serde(rename = "K0")]
    pub k0: f64,
    pub samples: usize,
    /// max over t of λ(t) − r.
    pub max_lambda_excess: f64,
    /// max over atoms of |λ(tᵢ) − r|.
    pub atom_complementarity: f64,
    /// max |λ − r| where the measure has a density.
    pub density_complementarity: f64,
    /// Samples where sign(z) contradicts u outside the dead band.
    pub bang_violations: usize,
    pub worst_bang_z: f64,
    /// max |z| on singular phases.
    pub singular_residual: f64,
    /// max |λ − λ̃e^{−κ(τ₁−t)}| on singular phases.
    pub singular_lambda_residual: f64,
    pub arrival: Option<ArrivalCheck>,
    pub init: InitCheck,
    pub terminal_distance: f64,
    pub pass: bool,
}

/// Checks the normalized necessary conditions along a rollout that carries
/// the adjoint.
pub fn check_conditions(ro: &Rollout, portrait: &PhasePortrait) -> Result<ConditionReport, VerifyError> {
    let traj = &ro.trajectory;
    if !traj.has_adjoint() {
        return Err(VerifyError::NoAdjoint);
    }
    let m = &portrait.model;
    let c = &m.constants;
    let sp = &portrait.specials;
    let r = m.params.r;

    let mut times = traj.sample_times(0.01);
    for seg in &traj.segments {
        times.extend(seg.state.steps.iter().map(|s| s.t1()));
    }
    times.sort_by(|a, b| a.partial_cmp(b).unwrap());
    times.dedup();

    let mut max_excess = f64::NEG_INFINITY;
    let mut density_res: f64 = 0.0;
    let mut violations = 0;
    let mut worst_bang: f64 = 0.0;
    let mut singular_res: f64 = 0.0;
    let mut singular_lam: f64 = 0.0;
    for &t in &times {
        let Some(seg) = traj.segment_at(t) else { continue };
        let Some(s) = traj.sample(t) else { continue };
        max_excess = max_excess.max(s.lambda - r);
        if seg.density > 0.0 {
            density_res = density_res.max((s.lambda - r).abs());
        }
        match seg.mode {
            ControlMode::One if s.z < -Z_BAND => {
                violations += 1;
                worst_bang = worst_bang.max(-s.z);
            }
            ControlMode::Zero if s.z > Z_BAND => {
                violations += 1;
                worst_bang = worst_bang.max(s.z);
            }
            ControlMode::SingularTilde => {
                singular_res = singular_res.max(s.z.abs());
                let closed = sp.lambda_tilde * (-c.kappa * (seg.t1 - t)).exp();
                singular_lam = singular_lam.max((s.lambda - closed).abs());
            }
            _ => {}
        }
    }

    let mut atom_res: f64 = 0.0;
    for j in traj.jumps.iter().filter(|j| j.size > 0.0) {
        if let Some(s) = traj.sample(j.t) {
            atom_res = atom_res.max((s.lambda - r).abs());
        }
    }

    // The jump onto K* at Σ*: either the capture jump or the start itself.
    let arrival_t = ro
        .spans
        .iter()
        .find(|s| matches!(s.phase, Phase::JumpTo { k_plus } if k_plus == sp.k_star))
        .map(|s| s.t0)
        .or(if ro.schedule.region == Region::SingularPoint { Some(0.0) } else { None });
    let arrival = arrival_t.and_then(|t| traj.sample(t)).map(|s| {
        let dz = s.z * m.g(s.x) - m.psi(s.x);
        let dlambda = c.kappa * s.lambda - s.z;
        let pass = (s.z - c.r_prime).abs() <= CONDITION_TOL
            && (s.lambda - r).abs() <= CONDITION_TOL
            && dz.abs() <= CONDITION_TOL
            && dlambda.abs() <= CONDITION_TOL;
        ArrivalCheck {
            t: s.t,
            z: s.z,
            lambda: s.lambda,
            dz,
            dlambda,
            pass,
        }
    });

    let s0 = traj.sample(0.0).ok_or(VerifyError::NoAdjoint)?;
    let e = ro.schedule.expected;
    let holds = |rel: crate::policy::Relation, v: f64| rel.holds(v, c.r_prime, r, sp.lambda_tilde, CONDITION_TOL);
    let init = InitCheck {
        expected: e,
        z0: s0.z,
        lambda0: s0.lambda,
        pass: holds(e.z0, s0.z) && holds(e.lambda0, s0.lambda),
    };

    let end = traj.final_state();
    let terminal_distance = (end.x - c.x_star).hypot(end.k - c.k_star);
    let pass = max_excess <= CONDITION_TOL
        && atom_res <= CONDITION_TOL
        && density_res <= CONDITION_TOL
        && violations == 0
        && singular_res <= CONDITION_TOL
        && singular_lam <= CONDITION_TOL
        && arrival.map_or(true, |a| a.pass)
        && init.pass
        && terminal_distance <= CONDITION_TOL;
    Ok(ConditionReport {
        region: ro.schedule.region,
        x0: ro.schedule.initial.x,
        k0: ro.schedule.initial.k,
        samples: times.len(),
        max_lambda_excess: max_excess,
        atom_complementarity: atom_res,
        density_complementarity: density_res,
        bang_violations: violations,
        worst_bang_z: worst_bang,
        singular_residual: singular_res,
        singular_lambda_residual: singular_lam,
        arrival,
        init,
        terminal_distance,
        pass,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepEntry {
    pub x: f64,
    #[serde(rename = "K")]
    pub k: f64,
    pub region: Region,
    pub report: Option<ConditionReport>,
    pub error: Option<String>,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConditionSweep {
    pub n: usize,
    pub x_grid: Vec<f64>,
    #[serde(rename = "K_grid")]
    pub k_grid: Vec<f64>,
    pub supported: usize,
    pub failures: usize,
    pub max_lambda_excess: f64,
    pub max_atom_complementarity: f64,
    pub bang_violations: usize,
    pub max_terminal_distance: f64,
    pub entries: Vec<SweepEntry>,
    pub pass: bool,
}

/// Cell-centred n×n grid over (0, x̄) × (0, k_max).
pub fn sweep_grid(model: &Model, n: usize, k_max: f64) -> (Vec<f64>, Vec<f64>) {
    let x_bar = model.x_bar();
    let xs = (0..n).map(|i| x_bar * (i as f64 + 0.5) / n as f64).collect();
    let ks = (0..n).map(|j| k_max * (j as f64 + 0.5) / n as f64).collect();
    (xs, ks)
}

/// Rolls out every supported start of an n×n grid and checks the conditions.
pub fn condition_sweep(portrait: &PhasePortrait, n: usize, k_max: f64, horizon: f64) -> ConditionSweep {
    let (xs, ks) = sweep_grid(&portrait.model, n, k_max);
    let starts: Vec<(f64, f64)> = xs.iter().flat_map(|&x| ks.iter().map(move |&k| (x, k))).collect();
    let opts = RolloutOptions {
        horizon,
        ..RolloutOptions::default()
    };
    let entries: Vec<SweepEntry> = starts
        .par_iter()
        .map(|&(x, k)| {
            let region = classify(portrait, x, k);
            let mut entry = SweepEntry {
                x,
                k,
                region,
                report: None,
                error: None,
                pass: false,
            };
            if matches!(region, Region::Boundary | Region::Unsupported) {
                entry.pass = true;
                return entry;
            }
            match rollout(portrait, x, k, &opts)
                .map_err(VerifyError::from)
                .and_then(|ro| check_conditions(&ro, portrait))
            {
                Ok(rep) => {
                    entry.pass = rep.pass;
                    entry.report = Some(rep);
                }
                Err(e) => entry.error = Some(e.to_string()),
            }
            entry
        })
        .collect();

    let reports = || entries.iter().filter_map(|e| e.report.as_ref());
    let supported = entries
        .iter()
        .filter(|e| !matches!(e.region, Region::Boundary | Region::Unsupported))
        .count();
    let failures = entries.iter().filter(|e| !e.pass).count();
    ConditionSweep {
        n,
        x_grid: xs,
        k_grid: ks,
        supported,
        failures,
        max_lambda_excess: reports().map(|r| r.max_lambda_excess).fold(f64::NEG_INFINITY, f64::max),
        max_atom_complementarity: reports().map(|r| r.atom_complementarity).fold(0.0, f64::max),
        bang_violations: reports().map(|r| r.bang_violations).sum(),
        max_terminal_distance: reports().map(|r| r.terminal_distance).fold(0.0, f64::max),
        pass: failures == 0,
        entries,
    }
}

/// A one-shot deviation from the baseline followed by the optimal policy:
/// follow the baseline to s⁻, add `pre_atom`, hold `mode` for `hold`, add
/// `post_atom`, then continue optimally from the resulting state.
/// `Open` is a fixed control with no investment at all.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum Perturbation {
    Deviation {
        label: String,
        s: f64,
        pre_atom: f64,
        mode: ControlMode,
        hold: f64,
        post_atom: f64,
    },
    NeverInvest {
        label: String,
        mode: ControlMode,
    },
}

impl Perturbation {
    pub fn label(&self) -> &str {
        match self {
            Perturbation::Deviation { label, .. } | Perturbation::NeverInvest { label, .. } => label,
        }
    }

    pub fn identity() -> Self {
        Perturbation::Deviation {
            label: "identity".into(),
            s: 0.0,
            pre_atom: 0.0,
            mode: ControlMode::One,
            hold: 0.0,
            post_atom: 0.0,
        }
    }
}

fn deviation(label: impl Into<String>, s: f64, pre_atom: f64, mode: ControlMode, hold: f64, post_atom: f64) -> Perturbation {
    Perturbation::Deviation {
        label: label.into(),
        s,
        pre_atom,
        mode,
        hold,
        post_atom,
    }
}

/// The standard family around a baseline rollout.
pub fn perturbation_family(base: &Rollout) -> Vec<Perturbation> {
    use ControlMode::{One, Zero};
    let mut out = vec![Perturbation::identity()];
    let t_end = base.horizon;
    let shifts = [0.02, 0.1, 0.5];

    for j in base.trajectory.jumps.iter().filter(|j| j.size > 0.0) {
        for eps in [0.01, 0.05] {
            for sign in [1.0, -1.0] {
                let a = j.size * (1.0 + sign * eps);
                out.push(deviation(format!("jump size x{:.2} at t={:.4}", 1.0 + sign * eps, j.t), j.t, a, One, 0.1, 0.0));
            }
        }
        for d in shifts {
            out.push(deviation(format!("jump at t={:.4} delayed by {d}", j.t), j.t, 0.0, One, d, j.size));
            if j.t >= d {
                let a = j.size;
                out.push(deviation(format!("jump at t={:.4} advanced by {d}", j.t), j.t - d, a, One, 0.0, 0.0));
            }
        }
    }

    for span in &base.spans {
        let t_b = span.t1;
        if !(t_b > 0.0 && t_b < t_end) {
            continue;
        }
        let what = match span.phase {
            Phase::BangOne { until: Target::SigmaStar } => "switch to stationary",
            Phase::BangOne { .. } => "bang-one end",
            Phase::Moratorium { .. } => "moratorium end",
            Phase::SingularTildeArc => "singular arc end",
            _ => continue,
        };
        for d in shifts {
            if t_b > d {
                out.push(deviation(format!("{what} at t={t_b:.4} advanced by {d} (u=1)"), t_b - d, 0.0, One, d, 0.0));
                out.push(deviation(format!("{what} at t={t_b:.4} advanced by {d} (u=0)"), t_b - d, 0.0, Zero, d, 0.0));
            }
            out.push(deviation(format!("{what} at t={t_b:.4} extended by {d} (u=1)"), t_b, 0.0, One, d, 0.0));
            out.push(deviation(format!("{what} at t={t_b:.4} extended by {d} (u=0)"), t_b, 0.0, Zero, d, 0.0));
        }
    }

    for s in [0.0, 0.25, 1.0, 3.0, 8.0, 15.0] {
        for hold in [0.05, 0.3, 1.0, 2.0] {
            out.push(deviation(format!("hold u=1 for {hold} at t={s}"), s, 0.0, One, hold, 0.0));
            out.push(deviation(format!("hold u=0 for {hold} at t={s}"), s, 0.0, Zero, hold, 0.0));
        }
        out.push(deviation(format!("extra atom 0.02 at t={s}"), s, 0.02, One, 0.0, 0.0));
        out.push(deviation(format!("extra atom 0.02 then u=1 for 0.3 at t={s}"), s, 0.02, One, 0.3, 0.0));
    }

    out.push(Perturbation::NeverInvest {
        label: "never invest, u=1".into(),
        mode: One,
    });
    out.push(Perturbation::NeverInvest {
        label: "never invest, u=0".into(),
        mode: Zero,
    });
    out
}

/// State and running objective just before any atom at time `s`.
fn left_state(traj: &Trajectory, s: f64) -> [f64; 3] {
    if s <= 0.0 {
        return [traj.initial.x, traj.initial.k, 0.0];
    }
    traj.segments
        .iter()
        .find(|seg| seg.t0 < s && s <= seg.t1)
        .map_or_else(|| traj.end_values(), |seg| seg.state.eval(s))
}

/// Objective of one perturbed policy.
pub fn perturbed_value(portrait: &PhasePortrait, base: &Rollout, pert: &Perturbation) -> Result<f64, VerifyError> {
    let m = &portrait.model;
    let p = &m.params;
    let horizon = base.horizon;
    match pert {
        Perturbation::Deviation {
            s,
            pre_atom,
            mode,
            hold,
            post_atom,
            ..
        } => {
            let mut y = left_state(&base.trajectory, *s);
            y[1] += pre_atom;
            y[2] += p.r * pre_atom * (-p.delta * s).exp();
            let t = s + hold;
            if *hold > 0.0 {
                let seg = integrate_segment(m, y, *s, t, *mode, 0.0, &OdeOptions::default(), &mut [])?;
                y = seg.end();
            }
            y[1] += post_atom;
            y[2] += p.r * post_atom * (-p.delta * t).exp();
            let v = value(portrait, y[0], y[1], horizon)?;
            Ok(y[2] + (-p.delta * t).exp() * v)
        }
        Perturbation::NeverInvest { mode, .. } => {
            let init = base.schedule.initial;
            let traj = integrate_state(
                m,
                init,
                &ControlTrace::constant(*mode, horizon),
                &ImpulseMeasure::none(),
                horizon,
                &OdeOptions::default(),
            )?;
            // Worst case over the truncated tail.
            let j = evaluate_objective(&traj, horizon, TailRule::Zero)?;
            Ok(j - tail_bound(m, horizon, init.k, 0.0))
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PerturbationResult {
    pub label: String,
    pub j: Option<f64>,
    /// Perturbed J minus baseline J.
    pub margin: Option<f64>,
    pub note: Option<String>,
}

/// A candidate in the brute-force family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind")]
pub enum OracleCandidate {
    /// One atom (t, h), u = α before the switch and β after.
    Switch {
        atom_t: f64,
        atom_h: f64,
        alpha: u8,
        beta: u8,
        t_switch: f64,
    },
    /// Atom h at t = 0, bang-one to the nearest approach to Σ*, jump to K*,
    /// then the stationary density.
    Capture { atom_h: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleGrid {
    pub atom_times: Vec<f64>,
    pub atom_sizes: Vec<f64>,
    pub switch_times: Vec<f64>,
}

impl OracleGrid {
    pub fn standard(horizon: f64) -> Self {
        let clip = |v: Vec<f64>| {
            let mut v: Vec<f64> = v.into_iter().map(|t| t.min(horizon)).collect();
            v.dedup();
            v
        };
        Self {
            atom_times: clip(vec![0.0, 0.5, 1.0, 2.0, 4.0]),
            atom_sizes: linspace(0.0, 2.0, 9),
            switch_times: clip(linspace(0.0, 10.0, 11)),
        }
    }

    pub fn candidates(&self) -> Vec<OracleCandidate> {
        let mut out = Vec::new();
        for &atom_t in &self.atom_times {
            for &atom_h in &self.atom_sizes {
                for alpha in 0..=1u8 {
                    for beta in 0..=1u8 {
                        for &t_switch in &self.switch_times {
                            out.push(OracleCandidate::Switch {
                                atom_t,
                                atom_h,
                                alpha,
                                beta,
                                t_switch,
                            });
                        }
                    }
                }
            }
        }
        out.extend(self.atom_sizes.iter().map(|&atom_h| OracleCandidate::Capture { atom_h }));
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OracleResult {
    pub best_j: f64,
    pub best_index: usize,
    pub best: OracleCandidate,
    pub candidates: usize,
    pub failed: usize,
    /// Tail bound for the truncated candidates plus integration slack.
    pub grid_bound: f64,
}

fn oracle_opts() -> OdeOptions {
    OdeOptions::default().tol(1e-10, 1e-12)
}

fn mode_of(bit: u8) -> ControlMode {
    if bit == 1 {
        ControlMode::One
    } else {
        ControlMode::Zero
    }
}

fn evaluate_candidate(model: &Model, init: State, horizon: f64, cand: &OracleCandidate) -> Result<f64, DynamicsError> {
    let c = &model.constants;
    let opts = oracle_opts();
    let (control, measure) = match *cand {
        OracleCandidate::Switch {
            atom_t,
            atom_h,
            alpha,
            beta,
            t_switch,
        } => {
            let control = if t_switch <= 0.0 || t_switch >= horizon || alpha == beta {
                let mode = if t_switch <= 0.0 { beta } else { alpha };
                ControlTrace::constant(mode_of(mode), horizon)
            } else {
                ControlTrace::switched(mode_of(alpha), t_switch, mode_of(beta), horizon)
            };
            let atoms = if atom_h > 0.0 { vec![Atom { t: atom_t, size: atom_h }] } else { vec![] };
            (control, ImpulseMeasure::new(atoms, vec![])?)
        }
        OracleCandidate::Capture { atom_h } => {
            let x_star = c.x_star;
            let y0 = [init.x, init.k + atom_h, 0.0];
            let t_a = if (init.x - x_star).abs() <= 1e-8 {
                0.0
            } else {
                let mut ev = [Event::terminal(move |_, y: &[f64; 3]| y[0] - x_star, Direction::Rising)];
                let seg = integrate_segment(model, y0, 0.0, horizon, ControlMode::One, 0.0, &opts, &mut ev)?;
                if seg.state.stopped {
                    seg.t1
                } else {
                    // nearest approach over the accepted steps
                    seg.state
                        .steps
                        .iter()
                        .map(|s| (s.t1(), (s.y1()[0] - x_star).abs()))
                        .fold((0.0, (init.x - x_star).abs()), |a, b| if b.1 < a.1 { b } else { a })
                        .0
                }
            };
            let k_arrive = if t_a > 0.0 {
                integrate_segment(model, y0, 0.0, t_a, ControlMode::One, 0.0, &opts, &mut [])?.end()[1]
            } else {
                y0[1]
            };
            let mut atoms = Vec::new();
            if atom_h > 0.0 {
                atoms.push(Atom { t: 0.0, size: atom_h });
            }
            let top_up = c.k_star - k_arrive;
            if top_up > 0.0 {
                if t_a == 0.0 && atom_h > 0.0 {
                    atoms[0].size += top_up;
                } else {
                    atoms.push(Atom { t: t_a, size: top_up });
                }
            }
            let density = if t_a < horizon {
                vec![DensityPiece {
                    t0: t_a,
                    t1: horizon,
                    rate: model.params.gamma * c.k_star,
                }]
            } else {
                vec![]
            };
            (ControlTrace::constant(ControlMode::One, horizon), ImpulseMeasure::new(atoms, density)?)
        }
    };
    let traj = integrate_state(model, init, &control, &measure, horizon, &opts)?;
    evaluate_objective(&traj, horizon, TailRule::stationary())
        .or_else(|_| evaluate_objective(&traj, horizon, TailRule::Zero))
}

/// Exhaustive search over the oracle family. Ties go to the lowest index.
pub fn brute_force_oracle(model: &Model, x0: f64, k0: f64, horizon: f64, grid: &OracleGrid) -> OracleResult {
    let init = State::new(x0, k0);
    let cands = grid.candidates();
    let values: Vec<Option<f64>> = cands
        .par_iter()
        .map(|cand| evaluate_candidate(model, init, horizon, cand).ok())
        .collect();
    let mut best_index = 0;
    let mut best_j = f64::INFINITY;
    for (i, v) in values.iter().enumerate() {
        if let Some(j) = v {
            if *j < best_j {
                best_j = *j;
                best_index = i;
            }
        }
    }
    let h_max = grid.atom_sizes.iter().copied().fold(0.0, f64::max);
    let k_max = (k0 + h_max).max(model.constants.k_star);
    OracleResult {
        best_j,
        best_index,
        best: cands[best_index],
        candidates: cands.len(),
        failed: values.iter().filter(|v| v.is_none()).count(),
        grid_bound: tail_bound(model, horizon, k_max, model.params.gamma * model.constants.k_star) + 1e-9,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DominanceReport {
    pub x0: f64,
    #[serde(rename = "K0")]
    pub k0: f64,
    pub region: Region,
    pub baseline: f64,
    pub perturbations: Vec<PerturbationResult>,
    pub evaluated: usize,
    pub worst_margin: f64,
    pub oracle: Option<OracleResult>,
    pub pass: bool,
}

/// Compares the synthesized policy from (x₀, K₀) against a perturbation
/// family (the standard one when `perturbations` is `None`) and, optionally,
/// the brute-force oracle.
pub fn dominance_test(
    portrait: &PhasePortrait,
    x0: f64,
    k0: f64,
    perturbations: Option<&[Perturbation]>,
    horizon: f64,
    oracle: Option<&OracleGrid>,
) -> Result<DominanceReport, VerifyError> {
    let base = rollout(portrait, x0, k0, &RolloutOptions::value_only(horizon))?;
    let family = match perturbations {
        Some(f) => f.to_vec(),
        None => perturbation_family(&base),
    };
    let results: Vec<PerturbationResult> = family
        .par_iter()
        .map(|pert| match perturbed_value(portrait, &base, pert) {
            Ok(j) => PerturbationResult {
                label: pert.label().to_string(),
                j: Some(j),
                margin: Some(j - base.value),
                note: None,
            },
            Err(e) => PerturbationResult {
                label: pert.label().to_string(),
                j: None,
                margin: None,
                note: Some(e.to_string()),
            },
        })
        .collect();
    let margins = || results.iter().filter_map(|r| r.margin);
    let worst_margin = margins().fold(f64::INFINITY, f64::min);
    let oracle = oracle.map(|g| brute_force_oracle(&portrait.model, x0, k0, horizon, g));
    let pass = margins().all(|d| d >= -DOMINANCE_TOL) && oracle.as_ref().map_or(true, |o| base.value <= o.best_j + o.grid_bound);
    Ok(DominanceReport {
        x0,
        k0,
        region: base.schedule.region,
        baseline: base.value,
        evaluated: margins().count(),
        perturbations: results,
        worst_margin,
        oracle,
        pass,
    })
}

/// Starts covering every open region and every named curve.
pub fn representative_starts(portrait: &PhasePortrait) -> Vec<(f64, f64)> {
    let sp = &portrait.specials;
    let mid = |c: &crate::curves::Curve| {
        let s = c.samples[c.samples.len() / 2];
        (s.x, s.k)
    };
    let mut v = vec![
        (0.8, 0.2),
        (0.95, 0.01 * sp.k_star),
        (0.4, 0.6),
        (0.1, 0.3),
        (0.2, 2.0),
        (0.6, 2.0),
        (sp.x_star, 0.3),
        (sp.x_tilde, 1.0),
        mid(&portrait.sigma0),
        mid(&portrait.sigma_s),
        mid(&portrait.gamma3),
        mid(&portrait.gamma4),
        (sp.x_star, sp.k_star),
        (sp.x_tilde, sp.k_dtilde),
    ];
    if let Some((xp, _)) = sp.meeting_point {
        // R1 below the second jump family
        let x = 0.5 * (xp + portrait.model.x_bar());
        v.push((x, 0.5 * portrait.hs.eval(x).unwrap_or(0.0)));
    }
    v
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct JumpScan {
    pub x0: f64,
    #[serde(rename = "K0")]
    pub k0: f64,
    pub hs: f64,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub argmin: f64,
    pub step: f64,
    pub pass: bool,
}

/// Jump to K⁺, bang-one until the first switching curve (Σ* or x = x̃),
/// then continue optimally; scanned over K⁺ ∈ [K₀, 2hₛ(x₀)].
pub fn jump_target_scan(portrait: &PhasePortrait, x0: f64, k0: f64, n: usize, horizon: f64) -> Result<JumpScan, VerifyError> {
    let m = &portrait.model;
    let p = &m.params;
    let x_star = m.constants.x_star;
    let x_tilde = m.constants.x_tilde;
    let (hs, _) = portrait.hs_exact(x0).map_err(PolicyError::from)?;
    let grid = linspace(k0, 2.0 * hs, n);
    let values: Vec<f64> = grid
        .par_iter()
        .map(|&kp| -> f64 {
            let run = || -> Result<f64, VerifyError> {
                let y0 = [x0, kp, p.r * (kp - k0)];
                let mut ev = [
                    Event::terminal(move |_, y: &[f64; 3]| y[0] - x_star, Direction::Rising),
                    Event::terminal(move |_, y: &[f64; 3]| y[0] - x_tilde, Direction::Falling),
                ];
                let opts = OdeOptions::default().event_samples(4);
                let seg = integrate_segment(m, y0, 0.0, horizon, ControlMode::One, 0.0, &opts, &mut ev)?;
                let y = seg.end();
                if !seg.state.stopped {
                    return Ok(y[2]);
                }
                let v = value(portrait, y[0], y[1], horizon)?;
                Ok(y[2] + (-p.delta * seg.t1).exp() * v)
            };
            run().unwrap_or(f64::INFINITY)
        })
        .collect();
    let (imin, _) = values
        .iter()
        .enumerate()
        .fold((0, f64::INFINITY), |a, (i, &v)| if v < a.1 { (i, v) } else { a });
    let step = grid[1] - grid[0];
    let argmin = grid[imin];
    Ok(JumpScan {
        x0,
        k0,
        hs,
        pass: (argmin - hs).abs() <= step * (1.0 + 1e-9),
        argmin,
        step,
        grid,
        values,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SmallCapitalComparison {
    pub x1: f64,
    pub alpha: f64,
    pub n: u32,
    #[serde(rename = "K1")]
    pub k1: f64,
    pub x0: f64,
    #[serde(rename = "K0")]
    pub k0: f64,
    pub jump: f64,
    pub j_jump: f64,
    pub j_never_one: f64,
    pub j_never_zero: f64,
    pub tail_bound: f64,
    pub margin: f64,
    pub pass: bool,
}

/// The small-capital comparison near x̄: one atom of size nK₀ at t = 0 with
/// u ≡ 1 beats never investing.
pub fn small_capital_comparison(model: &Model, horizon: f64) -> Result<SmallCapitalComparison, VerifyError> {
    let p = &model.params;
    let c = &model.constants;
    let x_bar = model.x_bar();
    let x1 = 0.5 * (c.x_star + x_bar);
    let alpha = p.p * x1 - c.c_star;
    let n = (p.p * x_bar / alpha).floor() as u32 + 1;
    let k1 = model.f(x1) / x1;
    let k0 = k1 / (2.0 * (n as f64 + 1.0));
    let x0 = 0.95_f64.max(x1);
    let jump = n as f64 * k0;
    let init = State::new(x0, k0);
    let opts = OdeOptions::default();
    let run = |mode: ControlMode, measure: ImpulseMeasure| -> Result<f64, VerifyError> {
        let traj = integrate_state(model, init, &ControlTrace::constant(mode, horizon), &measure, horizon, &opts)?;
        Ok(evaluate_objective(&traj, horizon, TailRule::Zero)?)
    };
    let j_jump = run(ControlMode::One, ImpulseMeasure::atom(0.0, jump)?)?;
    let j_never_one = run(ControlMode::One, ImpulseMeasure::none())?;
    let j_never_zero = run(ControlMode::Zero, ImpulseMeasure::none())?;
    let bound = tail_bound(model, horizon, k0 + jump, 0.0);
    let margin = j_never_one.min(j_never_zero) - j_jump - 2.0 * bound;
    Ok(SmallCapitalComparison {
        x1,
        alpha,
        n,
        k1,
        x0,
        k0,
        jump,
        j_jump,
        j_never_one,
        j_never_zero,
        tail_bound: bound,
        margin,
        pass: margin > 0.0,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::sync::OnceLock;

    fn portrait() -> &'static PhasePortrait {
        static P: OnceLock<PhasePortrait> = OnceLock::new();
        P.get_or_init(|| PhasePortrait::build(&Model::fix1()).unwrap())
    }

    #[test]
    fn stationary_conditions_are_tight() {
        let p = portrait();
        let sp = &p.specials;
        let ro = rollout(p, sp.x_star, sp.k_star, &RolloutOptions::default()).unwrap();
        let rep = check_conditions(&ro, p).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.max_lambda_excess.abs() <= 1e-10);
        assert!(rep.density_complementarity <= 1e-10);
        assert!((rep.init.z0 - p.model.constants.r_prime).abs() <= 1e-10);
    }

    #[test]
    fn moratorium_phase_has_negative_switch() {
        let p = portrait();
        let ro = rollout(p, 0.1, 0.3, &RolloutOptions::default()).unwrap();
        let rep = check_conditions(&ro, p).unwrap();
        assert!(rep.pass, "{rep:?}");
        let end = ro.spans[0].t1;
        for s in ro.trajectory.samples(0.01).iter().filter(|s| s.t < end - 0.05) {
            assert!(s.z < 0.0, "z = {} at t = {}", s.z, s.t);
            assert_eq!(s.u, 0.0);
        }
    }

    #[test]
    fn jump_start_is_complementary() {
        let p = portrait();
        let ro = rollout(p, 0.8, 0.2, &RolloutOptions::default()).unwrap();
        let rep = check_conditions(&ro, p).unwrap();
        assert!(rep.pass, "{rep:?}");
        assert!(rep.atom_complementarity <= 1e-6);
        let end = ro.spans[1].t1;
        let r = p.model.params.r;
        for s in ro.trajectory.samples(0.01).iter().filter(|s| s.t > 0.05 && s.t < end - 0.05) {
            assert!(s.lambda < r);
        }
    }

    #[test]
    fn identity_perturbation_is_exact() {
        let p = portrait();
        let base = rollout(p, 0.4, 0.6, &RolloutOptions::value_only(40.0)).unwrap();
        let j = perturbed_value(p, &base, &Perturbation::identity()).unwrap();
        assert_eq!(j, base.value);
    }

    #[test]
    fn oracle_from_the_singular_point_picks_capture() {
        let m = Model::fix1();
        let c = m.constants;
        let o = brute_force_oracle(&m, c.x_star, c.k_star, 40.0, &OracleGrid::standard(40.0));
        assert!(matches!(o.best, OracleCandidate::Capture { .. }), "{o:?}");
        assert!((o.best_j - m.stationary_value()).abs() <= 1e-8);
    }

    #[test]
    fn oracle_ties_go_to_the_first_candidate() {
        let m = Model::fix1();
        let o = brute_force_oracle(&m, 0.2, 0.5, 1e-12, &OracleGrid::standard(1e-12));
        assert_eq!(o.best_index, 0);
        assert!(o.best_j.abs() <= 1e-9);
    }

    #[test]
    fn small_capital_jump_beats_never_investing() {
        let cmp = small_capital_comparison(&Model::fix1(), 40.0).unwrap();
        assert_eq!(cmp.n, 3);
        assert!(cmp.pass, "{cmp:?}");
    }
}
