//! Scalar numerics shared by the model, the integrator and the curve builders.

pub mod interp;
pub mod roots;

pub use interp::{InterpError, Pchip};
pub use roots::{bisect_predicate, brent, BrentOptions, RootError};

/// `n` uniformly spaced points on `[a, b]`, both ends included.
pub fn linspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    match n {
        0 => Vec::new(),
        1 => vec![a],
        _ => {
            let step = (b - a) / (n - 1) as f64;
            let mut out: Vec<f64> = (0..n).map(|i| a + step * i as f64).collect();
            out[n - 1] = b;
            out
        }
    }
}
