//! Dormand–Prince 5(4) with Hairer's continuous extension and event location.
//!
//! Works in either time direction: pass `t_end < t0` to integrate backward.

use thiserror::Error;

use crate::numeric::{brent, BrentOptions, RootError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OdeError {
    #[error("step size underflow at t = {t} (h = {h})")]
    StepUnderflow { t: f64, h: f64 },
    #[error("step budget of {0} exhausted")]
    TooManySteps(usize),
    #[error("non-finite state at t = {0}")]
    NonFinite(f64),
    #[error("event refinement failed: {0}")]
    Event(#[from] RootError),
}

#[derive(Debug, Clone, Copy)]
pub struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    /// Largest step magnitude.
    pub h_max: f64,
    /// Initial step magnitude; `None` picks one from the local scales.
    pub h_init: Option<f64>,
    pub max_steps: usize,
    /// Event functions are sampled at this many equally spaced points per
    /// step (endpoints included) so a double crossing inside one step is
    /// still seen.
    pub event_samples: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-12,
            atol: 1e-12,
            h_max: f64::INFINITY,
            h_init: None,
            max_steps: 2_000_000,
            event_samples: 1,
        }
    }
}

impl OdeOptions {
    pub fn tol(mut self, rtol: f64, atol: f64) -> Self {
        self.rtol = rtol;
        self.atol = atol;
        self
    }

    pub fn h_max(mut self, h_max: f64) -> Self {
        self.h_max = h_max;
        self
    }

    pub fn event_samples(mut self, n: usize) -> Self {
        self.event_samples = n.max(1);
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Direction {
    /// Negative to positive, in integration order.
    Rising,
    Falling,
    Either,
}

impl Direction {
    fn accepts(self, before: f64, after: f64) -> bool {
        match self {
            Direction::Rising => before < 0.0 || (before == 0.0 && after > 0.0),
            Direction::Falling => before > 0.0 || (before == 0.0 && after < 0.0),
            Direction::Either => true,
        }
    }
}

pub struct Event<'a, const N: usize> {
    func: Box<dyn FnMut(f64, &[f64; N]) -> f64 + 'a>,
    pub direction: Direction,
    pub terminal: bool,
}

impl<'a, const N: usize> Event<'a, N> {
    pub fn new<G>(func: G, direction: Direction, terminal: bool) -> Self
    where
        G: FnMut(f64, &[f64; N]) -> f64 + 'a,
    {
        Self {
            func: Box::new(func),
            direction,
            terminal,
        }
    }

    pub fn terminal<G>(func: G, direction: Direction) -> Self
    where
        G: FnMut(f64, &[f64; N]) -> f64 + 'a,
    {
        Self::new(func, direction, true)
    }

    fn value(&mut self, t: f64, y: &[f64; N]) -> f64 {
        (self.func)(t, y)
    }

    /// Evaluates the event function outside an integration.
    pub fn value_at(&mut self, t: f64, y: &[f64; N]) -> f64 {
        self.value(t, y)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EventHit<const N: usize> {
    pub index: usize,
    pub t: f64,
    pub y: [f64; N],
}

/// One accepted step with its interpolation coefficients.
#[derive(Debug, Clone, Copy)]
pub struct DenseStep<const N: usize> {
    pub t0: f64,
    pub h: f64,
    rc: [[f64; N]; 5],
}

impl<const N: usize> DenseStep<N> {
    pub fn t1(&self) -> f64 {
        self.t0 + self.h
    }

    pub fn y0(&self) -> [f64; N] {
        self.rc[0]
    }

    pub fn y1(&self) -> [f64; N] {
        let mut out = [0.0; N];
        for i in 0..N {
            out[i] = self.rc[0][i] + self.rc[1][i];
        }
        out
    }

    pub fn eval(&self, t: f64) -> [f64; N] {
        let th = (t - self.t0) / self.h;
        let th1 = 1.0 - th;
        let mut out = [0.0; N];
        for i in 0..N {
            let r = &self.rc;
            out[i] = r[0][i]
                + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])));
        }
        out
    }

    fn contains(&self, t: f64) -> bool {
        let (lo, hi) = if self.h > 0.0 {
            (self.t0, self.t1())
        } else {
            (self.t1(), self.t0)
        };
        t >= lo && t <= hi
    }
}

/// Dense solution over `[t_start, t_end]` (or its reverse).
#[derive(Debug, Clone)]
pub struct Solution<const N: usize> {
    pub t_start: f64,
    pub t_end: f64,
    pub y_start: [f64; N],
    pub y_end: [f64; N],
    pub steps: Vec<DenseStep<N>>,
    pub events: Vec<EventHit<N>>,
    /// True when a terminal event stopped the integration.
    pub stopped: bool,
}

impl<const N: usize> Solution<N> {
    pub fn forward(&self) -> bool {
        self.t_end >= self.t_start
    }

    pub fn contains(&self, t: f64) -> bool {
        let (lo, hi) = if self.forward() {
            (self.t_start, self.t_end)
        } else {
            (self.t_end, self.t_start)
        };
        t >= lo && t <= hi
    }

    /// Dense evaluation; `t` is clamped into the solution interval.
    pub fn eval(&self, t: f64) -> [f64; N] {
        if t == self.t_end {
            return self.y_end;
        }
        if t == self.t_start || self.steps.is_empty() {
            return self.y_start;
        }
        let fwd = self.forward();
        let idx = self.steps.partition_point(|s| {
            if fwd {
                s.t1() < t
            } else {
                s.t1() > t
            }
        });
        let step = &self.steps[idx.min(self.steps.len() - 1)];
        let tt = if step.contains(t) {
            t
        } else if fwd {
            t.clamp(step.t0, step.t1())
        } else {
            t.clamp(step.t1(), step.t0)
        };
        step.eval(tt)
    }

    pub fn event(&self, index: usize) -> Option<&EventHit<N>> {
        self.events.iter().find(|e| e.index == index)
    }
}

// Dormand–Prince 5(4) tableau.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

#[inline]
fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    let mut out = *y;
    for i in 0..N {
        let mut acc = 0.0;
        for (c, k) in terms {
            acc += c * k[i];
        }
        out[i] += h * acc;
    }
    out
}

fn finite<const N: usize>(y: &[f64; N]) -> bool {
    y.iter().all(|v| v.is_finite())
}

fn initial_step<const N: usize, F>(f: &mut F, t0: f64, y0: &[f64; N], f0: &[f64; N], dir: f64, opts: &OdeOptions) -> f64
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let sc: Vec<f64> = y0.iter().map(|v| opts.atol + opts.rtol * v.abs()).collect();
    let d0 = (y0.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / N as f64).sqrt();
    let d1 = (f0.iter().zip(&sc).map(|(v, s)| (v / s).powi(2)).sum::<f64>() / N as f64).sqrt();
    let mut h0 = if d0 < 1e-5 || d1 < 1e-5 { 1e-6 } else { 0.01 * d0 / d1 };
    h0 = h0.min(opts.h_max);
    let y1 = axpy(y0, dir * h0, &[(1.0, f0)]);
    let f1 = f(t0 + dir * h0, &y1);
    let d2 = (f1
        .iter()
        .zip(f0)
        .zip(&sc)
        .map(|((a, b), s)| ((a - b) / s).powi(2))
        .sum::<f64>()
        / N as f64)
        .sqrt()
        / h0;
    let h1 = if d1.max(d2) <= 1e-15 {
        (h0 * 1e-3).max(1e-6)
    } else {
        (0.01 / d1.max(d2)).powf(0.2)
    };
    (100.0 * h0).min(h1).min(opts.h_max)
}

/// Integrates `y' = f(t, y)` from `t0` to `t_end` with event detection.
pub fn integrate<const N: usize, F>(
    mut f: F,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    opts: &OdeOptions,
    events: &mut [Event<'_, N>],
) -> Result<Solution<N>, OdeError>
where
    F: FnMut(f64, &[f64; N]) -> [f64; N],
{
    let mut sol = Solution {
        t_start: t0,
        t_end: t0,
        y_start: y0,
        y_end: y0,
        steps: Vec::new(),
        events: Vec::new(),
        stopped: false,
    };
    if !finite(&y0) {
        return Err(OdeError::NonFinite(t0));
    }
    if t_end == t0 {
        return Ok(sol);
    }
    let dir = (t_end - t0).signum();
    let span = (t_end - t0).abs();

    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    if !finite(&k1) {
        return Err(OdeError::NonFinite(t));
    }
    let mut h = opts
        .h_init
        .unwrap_or_else(|| initial_step(&mut f, t0, &y0, &k1, dir, opts))
        .min(span)
        .min(opts.h_max);
    let mut g_prev: Vec<f64> = events.iter_mut().map(|e| e.value(t0, &y0)).collect();
    let mut last_reject = false;

    for _ in 0..opts.max_steps {
        let remaining = (t_end - t).abs();
        if remaining <= 0.0 {
            break;
        }
        // Do not leave a sliver at the end.
        if h >= remaining || remaining - h < 1e-12 * span {
            h = remaining;
        }
        let hs = dir * h;
        let k2 = f(t + C2 * hs, &axpy(&y, hs, &[(A21, &k1)]));
        let k3 = f(t + C3 * hs, &axpy(&y, hs, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(t + C4 * hs, &axpy(&y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
        let k5 = f(
            t + C5 * hs,
            &axpy(&y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let y6 = axpy(&y, hs, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]);
        let t_new = if h == remaining { t_end } else { t + hs };
        let k6 = f(t_new, &y6);
        let y_new = axpy(&y, hs, &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)]);
        let k7 = f(t_new, &y_new);

        let mut err = 0.0;
        for i in 0..N {
            let e = hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            let sc = opts.atol + opts.rtol * y[i].abs().max(y_new[i].abs());
            err += (e / sc).powi(2);
        }
        let err = (err / N as f64).sqrt();

        if !err.is_finite() || !finite(&y_new) || !finite(&k7) {
            h *= 0.1;
            last_reject = true;
            if h < 1e-14 * t.abs().max(1.0) {
                return Err(OdeError::NonFinite(t));
            }
            continue;
        }

        if err > 1.0 {
            let fac = (0.9 * err.powf(-0.2)).max(0.2);
            h *= fac;
            last_reject = true;
            if h < 1e-15 * t.abs().max(1.0) * 4.0 {
                return Err(OdeError::StepUnderflow { t, h });
            }
            continue;
        }

        let mut rc = [[0.0; N]; 5];
        for i in 0..N {
            let ydiff = y_new[i] - y[i];
            let bspl = hs * k1[i] - ydiff;
            rc[0][i] = y[i];
            rc[1][i] = ydiff;
            rc[2][i] = bspl;
            rc[3][i] = ydiff - hs * k7[i] - bspl;
            rc[4][i] = hs
                * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i]);
        }
        let step = DenseStep { t0: t, h: t_new - t, rc };

        if !events.is_empty() {
            if let Some((t_stop, y_stop)) = locate_events(&step, events, &mut g_prev, &mut sol, opts, t0)? {
                // The full polynomial is kept; `t_end` marks where it stops counting.
                sol.steps.push(step);
                sol.t_end = t_stop;
                sol.y_end = y_stop;
                sol.stopped = true;
                return Ok(sol);
            }
        }

        sol.steps.push(step);
        t = t_new;
        y = y_new;
        k1 = k7;
        sol.t_end = t;
        sol.y_end = y;

        let mut fac = if err == 0.0 { 5.0 } else { 0.9 * err.powf(-0.2) };
        fac = fac.clamp(0.2, 5.0);
        if last_reject {
            fac = fac.min(1.0);
        }
        last_reject = false;
        h = (h * fac).min(opts.h_max);
        if t == t_end {
            return Ok(sol);
        }
    }
    Err(OdeError::TooManySteps(opts.max_steps))
}

/// Scans one accepted step for sign changes. Returns the stop point when a
/// terminal event fires.
fn locate_events<const N: usize>(
    step: &DenseStep<N>,
    events: &mut [Event<'_, N>],
    g_prev: &mut [f64],
    sol: &mut Solution<N>,
    opts: &OdeOptions,
    t_origin: f64,
) -> Result<Option<(f64, [f64; N])>, OdeError> {
    let n_sub = opts.event_samples.max(1);
    let mut earliest: Option<(f64, usize, [f64; N])> = None;
    let mut hits: Vec<EventHit<N>> = Vec::new();
    let root_opts = BrentOptions::default()
        .with_x_tol(1e-14 * step.t0.abs().max(1.0))
        .with_f_tol(f64::MIN_POSITIVE);

    for (idx, ev) in events.iter_mut().enumerate() {
        let mut ta = step.t0;
        let mut ga = g_prev[idx];
        for j in 1..=n_sub {
            let tb = if j == n_sub {
                step.t1()
            } else {
                step.t0 + step.h * j as f64 / n_sub as f64
            };
            let yb = step.eval(tb);
            let gb = ev.value(tb, &yb);
            let crossing = (ga < 0.0 && gb >= 0.0) || (ga > 0.0 && gb <= 0.0);
            if crossing && ev.direction.accepts(ga, gb) {
                let troot = if gb == 0.0 {
                    tb
                } else {
                    let (lo, hi) = (ta, tb);
                    let mut probe = |s: f64| -> Result<f64, RootError> {
                        let ys = step.eval(s);
                        Ok(ev.value(s, &ys))
                    };
                    brent(&mut probe, lo, hi, root_opts)?
                };
                if troot != t_origin {
                    let yr = step.eval(troot);
                    hits.push(EventHit { index: idx, t: troot, y: yr });
                    if ev.terminal {
                        let better = match earliest {
                            None => true,
                            Some((te, _, _)) => (troot - te) * step.h.signum() < 0.0,
                        };
                        if better {
                            earliest = Some((troot, idx, yr));
                        }
                        break;
                    }
                }
            }
            ta = tb;
            ga = gb;
        }
        g_prev[idx] = ga;
    }

    let dir = step.h.signum();
    hits.sort_by(|a, b| ((a.t - b.t) * dir).partial_cmp(&0.0).unwrap());
    match earliest {
        Some((te, _, ye)) => {
            sol.events
                .extend(hits.into_iter().filter(|h| (h.t - te) * dir <= 0.0));
            Ok(Some((te, ye)))
        }
        None => {
            sol.events.extend(hits);
            Ok(None)
        }
    }
}
