//! Σ₀: for each K₁ ∈ [0, K̃₁], run the backward full-effort flow from
//! (x*, K₁) together with z and λ, and record where z first vanishes.

use rayon::prelude::*;

use crate::dynamics::{ode, Direction, Event, OdeOptions};
use crate::model::Model;
use crate::numeric::{brent, linspace, BrentOptions, RootError};

use super::{Curve, CurveError, CurveSample, MonotoneMap, Monotonicity};

const HORIZON: f64 = 60.0;
const SWEEP: usize = 400;
const SCAN: usize = 64;

/// One member of the Σ₀ family.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sigma0Member {
    pub k1: f64,
    /// First zero of z if there is one, otherwise the time of the first
    /// local minimum of z (or of the stop).
    pub sigma: f64,
    pub has_zero: bool,
    pub z_min: f64,
    pub t_min: f64,
    /// State and switch values at `sigma`.
    pub x: f64,
    pub k: f64,
    pub z: f64,
    pub dz: f64,
    pub lambda: f64,
}

#[derive(Debug, Clone)]
pub struct Sigma0 {
    pub curve: Curve,
    pub h0: MonotoneMap,
    pub s0: MonotoneMap,
    pub l: MonotoneMap,
    pub k_tilde1: f64,
    pub k_dtilde: f64,
    pub x_breve: f64,
    pub x_hat: f64,
    pub k_hat: f64,
    pub lambda_tilde: f64,
    /// The tangential member at K̃₁.
    pub tangency: Sigma0Member,
    /// The K₁ = 0 member.
    pub origin: Sigma0Member,
}

/// State (x, w, m) with w = z − r' and m = λ − r.
fn rhs(m: &Model, k1: f64) -> impl Fn(f64, &[f64; 3]) -> [f64; 3] + '_ {
    let c = m.constants;
    let gamma = m.params.gamma;
    let psi_offset = m.psi_star(c.x_star);
    move |t, y| {
        let x = y[0];
        let dx = -m.f(x) + k1 * (gamma * t).exp() * x;
        let dw = -y[1] * m.g(x) + (m.psi_star(x) - psi_offset);
        let dm = -c.kappa * y[2] + y[1];
        [dx, dw, dm]
    }
}

/// Integrates the K₁-member up to the first local minimum of z (or until x
/// returns to x*), then locates the first zero of z on the dense output.
pub fn sigma0_member(m: &Model, k1: f64) -> Result<Sigma0Member, CurveError> {
    let c = m.constants;
    let r = m.params.r;
    let f = rhs(m, k1);
    let f_ev = rhs(m, k1);
    let x_star = c.x_star;
    let mut events = [
        Event::terminal(move |t, y: &[f64; 3]| f_ev(t, y)[1], Direction::Rising),
        Event::terminal(move |_, y: &[f64; 3]| y[0] - x_star, Direction::Rising),
    ];
    let opts = OdeOptions::default().event_samples(8);
    let sol = ode::integrate(&f, 0.0, [c.x_star, 0.0, 0.0], HORIZON, &opts, &mut events)?;

    let t_min = sol.t_end;
    let z_min = sol.y_end[1] + c.r_prime;
    let has_zero = z_min < 0.0;
    let sigma = if has_zero {
        let z_at = |t: f64| -> Result<f64, RootError> { Ok(sol.eval(t)[1] + c.r_prime) };
        brent(z_at, 0.0, t_min, BrentOptions::default().with_x_tol(1e-14).with_f_tol(1e-16))?
    } else {
        t_min
    };
    let y = if sigma == t_min { sol.y_end } else { sol.eval(sigma) };
    let dz = f(sigma, &y)[1];
    Ok(Sigma0Member {
        k1,
        sigma,
        has_zero,
        z_min,
        t_min,
        x: y[0],
        k: k1 * (m.params.gamma * sigma).exp(),
        z: y[1] + c.r_prime,
        dz,
        lambda: y[2] + r,
    })
}

fn k_tilde1(m: &Model) -> Result<f64, CurveError> {
    let k_star = m.constants.k_star;
    let grid = linspace(0.0, k_star, SCAN + 1);
    let flags: Vec<bool> = grid[..SCAN]
        .par_iter()
        .map(|&k1| sigma0_member(m, k1).map(|mm| mm.has_zero))
        .collect::<Result<_, _>>()?;
    // Predicate must be true on a prefix and false afterwards.
    let first_false = flags.iter().position(|f| !f).unwrap_or(SCAN);
    if let Some(bad) = flags[first_false..].iter().position(|f| *f) {
        let i = first_false + bad;
        return Err(CurveError::SweepFailure { lo: grid[i - 1], hi: grid[i] });
    }
    if first_false == 0 {
        return Err(CurveError::SweepFailure { lo: 0.0, hi: grid[1] });
    }
    let (lo, hi) = (grid[first_false - 1], grid[first_false]);
    let z_min = |k1: f64| -> Result<f64, RootError> {
        sigma0_member(m, k1)
            .map(|mm| mm.z_min)
            .map_err(|e| RootError::Evaluation { at: k1, reason: e.to_string() })
    };
    Ok(brent(z_min, lo, hi, BrentOptions::default().with_x_tol(1e-15).with_f_tol(1e-15))?)
}

pub fn build_sigma0(m: &Model) -> Result<Sigma0, CurveError> {
    let k_tilde1 = k_tilde1(m)?;
    let tangency = sigma0_member(m, k_tilde1)?;
    // The minimum of z at K̃₁ is where the curve ends, whatever the sign
    // of the residual z there.
    let tangency = Sigma0Member {
        sigma: tangency.t_min,
        has_zero: true,
        ..tangency
    };
    let origin = sigma0_member(m, 0.0)?;

    // Quadratic clustering toward K̃₁, where σ has a square-root profile.
    let k1s: Vec<f64> = linspace(0.0, 1.0, SWEEP)
        .into_iter()
        .map(|s| k_tilde1 * (1.0 - (1.0 - s) * (1.0 - s)))
        .collect();
    let mut members: Vec<Sigma0Member> = k1s[..SWEEP - 1]
        .par_iter()
        .map(|&k1| sigma0_member(m, k1))
        .collect::<Result<_, _>>()?;
    members.push(tangency);
    for w in members.windows(2) {
        if !w[0].has_zero {
            return Err(CurveError::SweepFailure { lo: w[0].k1, hi: w[1].k1 });
        }
    }

    let samples: Vec<CurveSample> = members
        .iter()
        .map(|mm| CurveSample::new(mm.k1, mm.x, mm.k).with_switch(0.0, mm.lambda))
        .collect();
    let curve = Curve::new("sigma0", "K1", samples);

    let l = MonotoneMap::new(
        "l",
        Monotonicity::Increasing,
        members.iter().map(|mm| mm.k1).collect(),
        members.iter().map(|mm| mm.sigma).collect(),
    )?;
    let s0 = MonotoneMap::new(
        "s0",
        Monotonicity::Increasing,
        members.iter().map(|mm| mm.k).collect(),
        members.iter().map(|mm| mm.x).collect(),
    )?;

    // x̂: where Σ₀ crosses F(x) = Kx.
    let gap = |k1: f64| -> Result<f64, RootError> {
        let mm = sigma0_member(m, k1).map_err(|e| RootError::Evaluation { at: k1, reason: e.to_string() })?;
        Ok(m.f(mm.x) - mm.k * mm.x)
    };
    let k1_hat = brent(gap, 0.0, k_tilde1, BrentOptions::default().with_x_tol(1e-15).with_f_tol(1e-14))?;
    let hat = sigma0_member(m, k1_hat)?;

    let mut pts: Vec<(f64, f64)> = vec![(hat.x, hat.k)];
    pts.extend(members.iter().filter(|mm| mm.x > hat.x).map(|mm| (mm.x, mm.k)));
    let (xs, ks): (Vec<f64>, Vec<f64>) = pts.into_iter().unzip();
    let h0 = MonotoneMap::new("h0", Monotonicity::Increasing, xs, ks)?;

    Ok(Sigma0 {
        curve,
        h0,
        s0,
        l,
        k_tilde1,
        k_dtilde: tangency.k,
        x_breve: origin.x,
        x_hat: hat.x,
        k_hat: hat.k,
        lambda_tilde: tangency.lambda,
        tangency,
        origin,
    })
}
