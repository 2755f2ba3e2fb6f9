use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum RootError {
    #[error("no sign change on [{a}, {b}] (f(a) = {fa}, f(b) = {fb})")]
    NoSignChange { a: f64, b: f64, fa: f64, fb: f64 },
    #[error("function evaluation failed at {at}: {reason}")]
    Evaluation { at: f64, reason: String },
    #[error("non-finite function value at {0}")]
    NonFinite(f64),
}

#[derive(Debug, Clone, Copy)]
pub struct BrentOptions {
    /// Stop once the bracket is narrower than this.
    pub x_tol: f64,
    /// Stop once |f| falls below this.
    pub f_tol: f64,
    pub max_iter: usize,
}

impl Default for BrentOptions {
    fn default() -> Self {
        Self {
            x_tol: 1e-13,
            f_tol: 1e-12,
            max_iter: 200,
        }
    }
}

impl BrentOptions {
    pub fn with_x_tol(mut self, x_tol: f64) -> Self {
        self.x_tol = x_tol;
        self
    }

    pub fn with_f_tol(mut self, f_tol: f64) -> Self {
        self.f_tol = f_tol;
        self
    }
}

/// Brent's method on a bracketing interval.
///
/// Terminates when the bracket width is below `x_tol` *and* `|f| < f_tol`,
/// or when `f` hits zero exactly, or after `max_iter` iterations (the best
/// iterate is returned in that case; a sign change is always maintained).
pub fn brent<F>(mut f: F, a: f64, b: f64, opts: BrentOptions) -> Result<f64, RootError>
where
    F: FnMut(f64) -> Result<f64, RootError>,
{
    let mut a = a;
    let mut b = b;
    let mut fa = f(a)?;
    let mut fb = f(b)?;
    if !fa.is_finite() {
        return Err(RootError::NonFinite(a));
    }
    if !fb.is_finite() {
        return Err(RootError::NonFinite(b));
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() {
        return Err(RootError::NoSignChange { a, b, fa, fb });
    }

    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut e = d;

    for _ in 0..opts.max_iter {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * opts.x_tol;
        let m = 0.5 * (c - b);
        if fb == 0.0 || (m.abs() <= tol && fb.abs() < opts.f_tol) {
            return Ok(b);
        }
        // Bracket collapsed to rounding: nothing more to gain.
        if m.abs() <= 2.0 * f64::EPSILON * b.abs().max(f64::MIN_POSITIVE) {
            return Ok(b);
        }
        if e.abs() < tol || fa.abs() <= fb.abs() {
            d = m;
            e = m;
        } else {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        }
        a = b;
        fa = fb;
        if d.abs() > tol {
            b += d;
        } else {
            b += tol.copysign(m);
        }
        fb = f(b)?;
        if !fb.is_finite() {
            return Err(RootError::NonFinite(b));
        }
    }
    Ok(b)
}

/// Bisection on a boolean predicate that is `true` at `lo` and `false` at
/// `hi`. Returns the final `(lo, hi)` bracket.
pub fn bisect_predicate<P, E>(
    mut pred: P,
    mut lo: f64,
    mut hi: f64,
    iterations: usize,
) -> Result<(f64, f64), E>
where
    P: FnMut(f64) -> Result<bool, E>,
{
    for _ in 0..iterations {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if pred(mid)? {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Ok((lo, hi))
}
