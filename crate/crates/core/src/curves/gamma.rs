use crate::dynamics::{ode, Direction, Event, OdeOptions};
use crate::model::Model;
use crate::numeric::linspace;

use super::sigma0::Sigma0;
use super::{Curve, CurveError, CurveSample, MonotoneMap, Monotonicity};

const SAFETY_HORIZON: f64 = 200.0;
const SAMPLES: usize = 400;

pub struct GammaCurves {
    pub gamma2: Curve,
    pub gamma3: Curve,
    pub gamma4: Curve,
    pub h3: MonotoneMap,
    pub h4: MonotoneMap,
    pub x_floor: f64,
}

/// Backward flow of full effort: x' = −F(x) + Kx, K' = γK.
fn backward_effort(m: &Model) -> impl Fn(f64, &[f64; 2]) -> [f64; 2] + '_ {
    move |_, y| [-m.f(y[0]) + y[1] * y[0], m.params.gamma * y[1]]
}

fn sample_solution(name: &str, sol: &ode::Solution<2>, n: usize) -> Curve {
    let samples = linspace(sol.t_start, sol.t_end, n)
        .into_iter()
        .map(|t| {
            let y = sol.eval(t);
            CurveSample::new(t, y[0], y[1])
        })
        .collect();
    Curve::new(name, "t", samples)
}

fn map_over_x(name: &'static str, curve: &Curve, direction: Monotonicity) -> Result<MonotoneMap, CurveError> {
    let mut pts: Vec<(f64, f64)> = curve.samples.iter().map(|s| (s.x, s.k)).collect();
    pts.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    pts.dedup_by(|a, b| a.0 == b.0);
    let (xs, ks) = pts.into_iter().unzip();
    MonotoneMap::new(name, direction, xs, ks)
}

/// Γ₁ from (x*, K*) under the backward full-effort flow, up to x = x̄, and
/// its graph K = h₁(x).
pub fn build_gamma1(m: &Model) -> Result<(Curve, MonotoneMap), CurveError> {
    let c = m.constants;
    let x_bar = c.x_bar;
    let mut ev = [Event::terminal(move |_, y: &[f64; 2]| y[0] - x_bar, Direction::Rising)];
    let sol = ode::integrate(backward_effort(m), 0.0, [c.x_star, c.k_star], SAFETY_HORIZON, &OdeOptions::default(), &mut ev)?;
    if !sol.stopped {
        return Err(CurveError::NoCrossing { curve: "gamma1" });
    }
    // Cluster samples near the start where K − K* ~ √(x − x*).
    let samples = linspace(0.0, 1.0, SAMPLES)
        .into_iter()
        .map(|s| {
            let t = sol.t_end * s * s;
            let y = sol.eval(t);
            CurveSample::new(t, y[0], y[1])
        })
        .collect();
    let curve = Curve::new("gamma1", "t", samples);
    let h1 = map_over_x("h1", &curve, Monotonicity::Increasing)?;
    Ok((curve, h1))
}

/// Γ₃ (backward full effort from (x̃, K̃̃) to x̄), Γ₂ (forward full effort
/// from (x̃, K̃̃) to Σ*) and Γ₄ (backward moratorium from (x̃, K̃̃) down to
/// x_floor). Γ₂ must land on (x*, K̃₁) from the Σ₀ sweep.
pub fn build_gamma2_3_4(m: &Model, s0: &Sigma0) -> Result<GammaCurves, CurveError> {
    let c = m.constants;
    let p = m.params;
    let start = [c.x_tilde, s0.k_dtilde];
    let opts = OdeOptions::default();

    let x_bar = c.x_bar;
    let mut ev = [Event::terminal(move |_, y: &[f64; 2]| y[0] - x_bar, Direction::Rising)];
    let g3 = ode::integrate(backward_effort(m), 0.0, start, SAFETY_HORIZON, &opts, &mut ev)?;
    if !g3.stopped {
        return Err(CurveError::NoCrossing { curve: "gamma3" });
    }
    let gamma3 = sample_solution("gamma3", &g3, SAMPLES);
    let h3 = map_over_x("h3", &gamma3, Monotonicity::Increasing)?;

    let x_star = c.x_star;
    let mut ev = [Event::terminal(move |_, y: &[f64; 2]| y[0] - x_star, Direction::Rising)];
    let forward = |_: f64, y: &[f64; 2]| [m.f(y[0]) - y[1] * y[0], -p.gamma * y[1]];
    let g2 = ode::integrate(forward, 0.0, start, SAFETY_HORIZON, &opts, &mut ev)?;
    if !g2.stopped {
        return Err(CurveError::NoCrossing { curve: "gamma2" });
    }
    let gap = (g2.y_end[1] - s0.k_tilde1).abs().max((g2.y_end[0] - c.x_star).abs());
    if gap > 1e-6 {
        return Err(CurveError::CrossValidation { what: "gamma2 landing vs K_tilde1", gap });
    }
    let gamma2 = sample_solution("gamma2", &g2, SAMPLES);

    let x_floor = 1e-4 * c.x_bar;
    let mut ev = [Event::terminal(move |_, y: &[f64; 2]| y[0] - x_floor, Direction::Falling)];
    let moratorium_back = |_: f64, y: &[f64; 2]| [-m.f(y[0]), p.gamma * y[1]];
    let g4 = ode::integrate(moratorium_back, 0.0, start, SAFETY_HORIZON, &opts, &mut ev)?;
    if !g4.stopped {
        return Err(CurveError::NoCrossing { curve: "gamma4" });
    }
    // Γ₄ is long in log x; sample uniformly in time.
    let gamma4 = sample_solution("gamma4", &g4, SAMPLES);
    let h4 = map_over_x("h4", &gamma4, Monotonicity::Decreasing)?;

    Ok(GammaCurves { gamma2, gamma3, gamma4, h3, h4, x_floor })
}

/// K on Γ₄ at a biomass below the stored floor: run the moratorium flow from
/// x up to the floor and undo the capital decay.
pub fn gamma4_level(m: &Model, x: f64, x_floor: f64, k_floor: f64) -> Result<f64, CurveError> {
    if x <= 0.0 {
        return Ok(f64::INFINITY);
    }
    let mut ev = [Event::terminal(move |_, y: &[f64; 1]| y[0] - x_floor, Direction::Rising)];
    let sol = ode::integrate(|_, y: &[f64; 1]| [m.f(y[0])], 0.0, [x], 1e4, &OdeOptions::default(), &mut ev)?;
    if !sol.stopped {
        return Err(CurveError::NoCrossing { curve: "gamma4 extension" });
    }
    Ok(k_floor * (m.params.gamma * sol.t_end).exp())
}
