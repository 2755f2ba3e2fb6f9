//! Σₛ: post-jump capital levels. A point of Σₛ is where the backward
//! full-effort orbit through an arrival point on Σ* first has λ = r again.

use rayon::prelude::*;

use crate::dynamics::{ode, Direction, Event, OdeOptions};
use crate::model::Model;
use crate::numeric::{brent, linspace, BrentOptions, RootError};

use super::gamma::GammaCurves;
use super::sigma0::Sigma0;
use super::{CaseFlag, Curve, CurveError, CurveSample, MonotoneMap, Monotonicity};

const HORIZON: f64 = 80.0;
const FIRST_FAMILY: usize = 256;
const SECOND_FAMILY: usize = 200;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct JumpMember {
    pub k1: f64,
    pub tau: f64,
    pub x: f64,
    pub k: f64,
    pub z: f64,
    pub lambda: f64,
    /// x passed x̄ before λ returned to r.
    pub beyond_bar: bool,
}

fn ode_opts() -> OdeOptions {
    // Deviations start at exactly zero and stay tiny near K*, so error
    // control is purely relative.
    OdeOptions::default().tol(1e-12, 1e-30).event_samples(4)
}

/// Member of the first family: arrival at (x*, K₁), K₁ ≤ K*. Integrated in
/// deviations e = x − x*, w = z − r', m = λ − r to keep precision as K₁ → K*.
pub fn jump_member_part1(model: &Model, k1: f64) -> Result<JumpMember, CurveError> {
    let c = model.constants;
    let p = model.params;
    let r = p.r;
    if k1 >= c.k_star {
        return Ok(JumpMember { k1, tau: 0.0, x: c.x_star, k: c.k_star, z: c.r_prime, lambda: r, beyond_bar: false });
    }
    let pr = p.production;
    let xs = c.x_star;
    let f = move |t: f64, y: &[f64; 3]| {
        let e = y[0];
        let grow = (p.gamma * t).exp();
        let k_gap = (k1 - c.k_star) + k1 * (p.gamma * t).exp_m1();
        let de = -pr.f_increment(xs, e) + k_gap * xs + k1 * grow * e;
        let dw = -y[1] * p.g_raw(xs + e) + p.psi_star_increment(xs, e);
        let dm = -c.kappa * y[2] + y[1];
        [de, dw, dm]
    };
    let bar_gap = c.x_bar - xs;
    let mut events = [
        Event::terminal(|_, y: &[f64; 3]| y[2], Direction::Rising),
        Event::terminal(move |_, y: &[f64; 3]| y[0] - bar_gap, Direction::Rising),
    ];
    let sol = ode::integrate(f, 0.0, [0.0; 3], HORIZON, &ode_opts(), &mut events)?;
    let hit = sol.events.last().filter(|_| sol.stopped).ok_or(CurveError::ContinuationStall { k1 })?;
    let y = hit.y;
    Ok(JumpMember {
        k1,
        tau: hit.t,
        x: xs + y[0],
        k: k1 * (p.gamma * hit.t).exp(),
        z: c.r_prime + y[1],
        lambda: r + y[2],
        beyond_bar: hit.index == 1,
    })
}

/// λ on Σ̃ at (x̃, K₁): the singular arc down to (x̃, K̃̃) takes
/// ln(K₁/K̃̃)/γ, over which λ' = κλ.
pub fn lambda_on_sigma_tilde(model: &Model, k1: f64, k_dtilde: f64, lambda_tilde: f64) -> f64 {
    let p = model.params;
    lambda_tilde * (k_dtilde / k1).powf(model.constants.kappa / p.gamma)
}

/// Member of the second family: start on Σ̃ at (x̃, K₁), K₁ ≥ K̃̃, with
/// z = 0 and λ from the singular arc. With `stop_at_bar` the integration
/// ends if x reaches x̄ first.
pub fn jump_member_part2(
    model: &Model,
    k1: f64,
    k_dtilde: f64,
    lambda_tilde: f64,
    stop_at_bar: bool,
) -> Result<JumpMember, CurveError> {
    let c = model.constants;
    let p = model.params;
    let f = move |t: f64, y: &[f64; 3]| {
        let x = y[0];
        let dx = -model.f(x) + k1 * (p.gamma * t).exp() * x;
        let dw = -y[1] * model.g(x) + model.psi_star(x);
        let dm = -c.kappa * y[2] + y[1];
        [dx, dw, dm]
    };
    let lam0 = lambda_on_sigma_tilde(model, k1, k_dtilde, lambda_tilde);
    let x_bar = c.x_bar;
    let mut events = vec![Event::terminal(|_, y: &[f64; 3]| y[2], Direction::Rising)];
    if stop_at_bar {
        events.push(Event::terminal(move |_, y: &[f64; 3]| y[0] - x_bar, Direction::Rising));
    }
    let opts = OdeOptions::default().event_samples(4);
    let sol = ode::integrate(f, 0.0, [c.x_tilde, -c.r_prime, lam0 - p.r], HORIZON, &opts, &mut events)?;
    let hit = sol.events.last().filter(|_| sol.stopped).ok_or(CurveError::ContinuationStall { k1 })?;
    let y = hit.y;
    Ok(JumpMember {
        k1,
        tau: hit.t,
        x: y[0],
        k: k1 * (p.gamma * hit.t).exp(),
        z: c.r_prime + y[1],
        lambda: p.r + y[2],
        beyond_bar: hit.index == 1 || y[0] > x_bar,
    })
}

pub struct JumpCurve {
    pub curve: Curve,
    pub hs: MonotoneMap,
    pub g_tau: MonotoneMap,
    pub g_tau2: Option<MonotoneMap>,
    pub lambda_map: Option<MonotoneMap>,
    pub case: CaseFlag,
    pub x_s: f64,
    pub k_bar: f64,
    pub meeting_point: Option<(f64, f64)>,
    pub k_dtilde1: Option<f64>,
    pub pruned: bool,
    /// Number of leading Σₛ samples that belong to the first family.
    pub split: usize,
    pub first_family: Vec<JumpMember>,
    pub second_family: Vec<JumpMember>,
}

fn as_root_err(k1: f64) -> impl Fn(CurveError) -> RootError {
    move |e| RootError::Evaluation { at: k1, reason: e.to_string() }
}

pub fn build_sigma_s(model: &Model, s0: &Sigma0, gam: &GammaCurves) -> Result<JumpCurve, CurveError> {
    let c = model.constants;
    let span = c.k_star - s0.k_tilde1;
    // Ordered along the continuation: K₁ from K* down to K̃₁, quadratically
    // clustered at K* where τ → 0.
    let k1s: Vec<f64> = linspace(0.0, 1.0, FIRST_FAMILY)
        .into_iter()
        .map(|s| if s == 1.0 { s0.k_tilde1 } else { c.k_star - span * s * s })
        .collect();
    let mut first: Vec<JumpMember> = k1s
        .par_iter()
        .map(|&k1| jump_member_part1(model, k1))
        .collect::<Result<_, _>>()?;

    let mut case = CaseFlag::CaseI;
    let mut k_dtilde1 = None;
    let mut meeting_point = None;
    let mut second = Vec::new();

    if let Some(i) = first.iter().position(|m| m.beyond_bar) {
        // The first family reaches x̄ before K̃₁.
        case = CaseFlag::CaseII;
        let (lo, hi) = (first[i].k1, first[i - 1].k1);
        let excess = |k1: f64| -> Result<f64, RootError> {
            let m = jump_member_part1(model, k1).map_err(as_root_err(k1))?;
            Ok(if m.beyond_bar { 1.0 } else { m.x - c.x_bar })
        };
        let k1_end = brent(excess, lo, hi, BrentOptions::default().with_x_tol(1e-14))?;
        first.truncate(i);
        let mut end = jump_member_part1(model, k1_end)?;
        end.x = end.x.min(c.x_bar);
        first.push(end);
    } else {
        let p = first.last().copied().unwrap();
        let on_gamma3 = gam.h3.eval(p.x).map(|k| (k - p.k).abs()).unwrap_or(f64::INFINITY);
        if on_gamma3 > 1e-6 {
            return Err(CurveError::CrossValidation { what: "first jump family end vs gamma3", gap: on_gamma3 });
        }
        meeting_point = Some((p.x, p.k));

        let member = |k1: f64, stop: bool| jump_member_part2(model, k1, s0.k_dtilde, s0.lambda_tilde, stop);
        let start = member(s0.k_dtilde, true)?;
        let gap = (start.x - p.x).abs().max((start.k - p.k).abs());
        if gap > 1e-6 {
            return Err(CurveError::CrossValidation { what: "jump families at the meeting point", gap });
        }
        // Bracket the K₁ whose member lands exactly on x̄.
        let mut lo = s0.k_dtilde;
        let mut hi = lo;
        for _ in 0..200 {
            hi *= 1.05;
            if member(hi, false)?.x >= c.x_bar {
                break;
            }
            lo = hi;
        }
        let excess = |k1: f64| -> Result<f64, RootError> {
            member(k1, false).map(|m| m.x - c.x_bar).map_err(as_root_err(k1))
        };
        let k_end = brent(excess, lo, hi, BrentOptions::default().with_x_tol(1e-14).with_f_tol(1e-13))?;
        k_dtilde1 = Some(k_end);
        let grid = linspace(s0.k_dtilde, k_end, SECOND_FAMILY);
        second = grid[1..]
            .par_iter()
            .map(|&k1| member(k1, false))
            .collect::<Result<_, _>>()?;
        if let Some(last) = second.last_mut() {
            last.x = c.x_bar;
        }
    }

    // Assemble by increasing x and keep the maximal monotone prefix.
    let ordered: Vec<JumpMember> = first.iter().chain(second.iter()).copied().collect();
    let mut keep = 1;
    while keep < ordered.len() && ordered[keep].x > ordered[keep - 1].x && ordered[keep].k > ordered[keep - 1].k {
        keep += 1;
    }
    let pruned = keep < ordered.len();
    let ordered = &ordered[..keep];
    let split = first.len().min(keep);

    let samples = ordered
        .iter()
        .map(|m| CurveSample::new(m.k1, m.x, m.k).with_switch(m.z, m.lambda))
        .collect();
    let curve = Curve::new("sigma_s", "K1", samples);
    let hs = MonotoneMap::new(
        "hs",
        Monotonicity::Increasing,
        ordered.iter().map(|m| m.x).collect(),
        ordered.iter().map(|m| m.k).collect(),
    )?;

    let mut asc: Vec<&JumpMember> = first.iter().collect();
    asc.reverse();
    let g_tau = MonotoneMap::new(
        "g_tau",
        Monotonicity::Decreasing,
        asc.iter().map(|m| m.k1).collect(),
        asc.iter().map(|m| m.tau).collect(),
    )?;

    let (g_tau2, lambda_map) = if second.is_empty() {
        (None, None)
    } else {
        let all: Vec<JumpMember> = std::iter::once(jump_member_part2(model, s0.k_dtilde, s0.k_dtilde, s0.lambda_tilde, false)?)
            .chain(second.iter().copied())
            .collect();
        let k1s: Vec<f64> = all.iter().map(|m| m.k1).collect();
        let g2 = MonotoneMap::new("g_tau", Monotonicity::Decreasing, k1s.clone(), all.iter().map(|m| m.tau).collect())?;
        let lam = MonotoneMap::new(
            "Lambda",
            Monotonicity::Decreasing,
            k1s.clone(),
            k1s.iter()
                .map(|&k| lambda_on_sigma_tilde(model, k, s0.k_dtilde, s0.lambda_tilde))
                .collect(),
        )?;
        (Some(g2), Some(lam))
    };

    let last = ordered.last().unwrap();
    Ok(JumpCurve {
        curve,
        hs,
        g_tau,
        g_tau2,
        lambda_map,
        case,
        x_s: last.x,
        k_bar: last.k,
        meeting_point,
        k_dtilde1,
        pruned,
        split,
        first_family: first,
        second_family: second,
    })
}
