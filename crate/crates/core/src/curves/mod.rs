//! Phase portrait: the construction curves Γ₁–Γ₄, the switching curves Σ*,
//! Σ̃, Σ₀, the jump curve Σₛ, their monotone reparameterizations and the
//! special points they meet at.

mod gamma;
mod jump;
mod sigma0;

use std::fmt::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dynamics::export::csv_row;
use crate::dynamics::{DynamicsError, OdeError};
use crate::model::Model;
use crate::numeric::{InterpError, Pchip, RootError};

pub use gamma::{build_gamma1, build_gamma2_3_4, gamma4_level, GammaCurves};
pub use jump::{build_sigma_s, jump_member_part1, jump_member_part2, JumpCurve, JumpMember};
pub use sigma0::{build_sigma0, sigma0_member, Sigma0, Sigma0Member};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum CurveError {
    #[error("{curve}: target not reached within the safety horizon")]
    NoCrossing { curve: &'static str },
    #[error("has-zero predicate not monotone between K1 = {lo} and K1 = {hi}")]
    SweepFailure { lo: f64, hi: f64 },
    #[error("cross-validation failed: {what} differs by {gap:e}")]
    CrossValidation { what: &'static str, gap: f64 },
    #[error("continuation lost the root at K1 = {k1}")]
    ContinuationStall { k1: f64 },
    #[error("map {0} is not monotone")]
    NonMonotone(&'static str),
    #[error("integrator: {0}")]
    Ode(#[from] OdeError),
    #[error("dynamics: {0}")]
    Dynamics(#[from] DynamicsError),
    #[error("interpolation: {0}")]
    Interp(#[from] InterpError),
    #[error("root finding: {0}")]
    Root(#[from] RootError),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub param: f64,
    pub x: f64,
    #[serde(rename = "K")]
    pub k: f64,
    /// NaN where the switch values were not integrated.
    pub z: f64,
    pub lambda: f64,
}

impl CurveSample {
    pub fn new(param: f64, x: f64, k: f64) -> Self {
        Self { param, x, k, z: f64::NAN, lambda: f64::NAN }
    }

    pub fn with_switch(mut self, z: f64, lambda: f64) -> Self {
        self.z = z;
        self.lambda = lambda;
        self
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Curve {
    pub name: String,
    pub param_name: String,
    pub samples: Vec<CurveSample>,
}

impl Curve {
    pub fn new(name: &str, param_name: &str, samples: Vec<CurveSample>) -> Self {
        Self {
            name: name.to_string(),
            param_name: param_name.to_string(),
            samples,
        }
    }

    pub fn first(&self) -> &CurveSample {
        &self.samples[0]
    }

    pub fn last(&self) -> &CurveSample {
        &self.samples[self.samples.len() - 1]
    }

    fn has_switch(&self) -> bool {
        self.samples.iter().any(|s| !s.z.is_nan())
    }

    /// `param,x,K` rows, plus `z,lambda` when the switch values exist.
    pub fn to_csv(&self) -> String {
        let with_switch = self.has_switch();
        let mut out = String::from(if with_switch { "param,x,K,z,lambda\n" } else { "param,x,K\n" });
        for s in &self.samples {
            let row = if with_switch {
                csv_row(&[s.param, s.x, s.k, s.z, s.lambda])
            } else {
                csv_row(&[s.param, s.x, s.k])
            };
            let _ = writeln!(out, "{row}");
        }
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Monotonicity {
    Increasing,
    Decreasing,
}

/// A scalar reparameterization stored as a shape-preserving interpolant.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonotoneMap {
    pub name: String,
    pub direction: Monotonicity,
    interp: Pchip,
}

impl MonotoneMap {
    /// Builds the map and insists on strict monotonicity of the samples.
    pub fn new(name: &'static str, direction: Monotonicity, xs: Vec<f64>, ys: Vec<f64>) -> Result<Self, CurveError> {
        let ok = ys.windows(2).all(|w| match direction {
            Monotonicity::Increasing => w[1] > w[0],
            Monotonicity::Decreasing => w[1] < w[0],
        });
        if !ok {
            return Err(CurveError::NonMonotone(name));
        }
        Ok(Self {
            name: name.to_string(),
            direction,
            interp: Pchip::new(xs, ys)?,
        })
    }

    pub fn eval(&self, x: f64) -> Result<f64, InterpError> {
        self.interp.eval(x)
    }

    pub fn domain(&self) -> (f64, f64) {
        self.interp.domain()
    }

    pub fn contains(&self, x: f64) -> bool {
        self.interp.contains(x)
    }

    pub fn breakpoints(&self) -> (&[f64], &[f64]) {
        (self.interp.xs(), self.interp.ys())
    }

    /// Strict monotonicity of the interpolant on an `n`-point uniform grid.
    pub fn strictly_monotone_on_grid(&self, n: usize) -> bool {
        let (lo, hi) = self.domain();
        let vals: Vec<f64> = (0..n)
            .map(|i| {
                let x = if i + 1 == n { hi } else { lo + (hi - lo) * i as f64 / (n - 1) as f64 };
                self.interp.eval(x).expect("inside domain")
            })
            .collect();
        vals.windows(2).all(|w| match self.direction {
            Monotonicity::Increasing => w[1] > w[0],
            Monotonicity::Decreasing => w[1] < w[0],
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum CaseFlag {
    /// The first continuation reaches Γ₃ before x̄ and a second family
    /// starting on Σ̃ carries Σₛ on to x̄.
    #[serde(rename = "I")]
    CaseI,
    /// The first continuation reaches x̄ directly.
    #[serde(rename = "II")]
    CaseII,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Specials {
    pub x_tilde: f64,
    pub x_star: f64,
    #[serde(rename = "K_tilde")]
    pub k_tilde: f64,
    #[serde(rename = "K_star")]
    pub k_star: f64,
    #[serde(rename = "K_tilde1")]
    pub k_tilde1: f64,
    #[serde(rename = "K_dtilde")]
    pub k_dtilde: f64,
    pub x_breve: f64,
    pub x_hat: f64,
    #[serde(rename = "K_hat")]
    pub k_hat: f64,
    pub lambda_tilde: f64,
    pub x_s: f64,
    #[serde(rename = "K_bar")]
    pub k_bar: f64,
    pub case: CaseFlag,
    /// Where the first Σₛ family meets Γ₃ (Case I only).
    pub meeting_point: Option<(f64, f64)>,
    /// K₁ at which the second family reaches x̄ (Case I only).
    #[serde(rename = "K_dtilde1")]
    pub k_dtilde1: Option<f64>,
    pub xs_is_xbar: bool,
    /// True if Σₛ had to be cut back to a monotone prefix.
    pub sigma_s_pruned: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct PhasePortrait {
    pub model: Model,
    pub gamma1: Curve,
    pub gamma2: Curve,
    pub gamma3: Curve,
    pub gamma4: Curve,
    pub sigma_star: Curve,
    pub sigma_tilde: Curve,
    pub sigma0: Curve,
    pub sigma_s: Curve,
    pub h1: MonotoneMap,
    pub h0: MonotoneMap,
    /// Σ₀ as x over K ∈ [0, K̃̃].
    pub s0: MonotoneMap,
    pub l: MonotoneMap,
    pub hs: MonotoneMap,
    pub g_tau: MonotoneMap,
    /// τ over the second Σₛ family (Case I).
    pub g_tau2: Option<MonotoneMap>,
    pub lambda_map: Option<MonotoneMap>,
    /// Γ₃ as K over x ∈ [x̃, x̄].
    pub h3: MonotoneMap,
    /// Γ₄ as K over x ∈ [x_floor, x̃] (decreasing in x).
    pub h4: MonotoneMap,
    pub x_floor: f64,
    /// Leading Σₛ samples owned by the first family.
    pub sigma_s_split: usize,
    pub specials: Specials,
}

impl PhasePortrait {
    pub fn build(model: &Model) -> Result<Self, CurveError> {
        let c = model.constants;
        let (gamma1, h1) = build_gamma1(model)?;
        let s0 = build_sigma0(model)?;
        let gam = build_gamma2_3_4(model, &s0)?;
        let js = build_sigma_s(model, &s0, &gam)?;

        let n = 400;
        let sigma_star = Curve::new(
            "sigma_star",
            "K",
            (0..n)
                .map(|i| {
                    let k = c.k_star * i as f64 / (n - 1) as f64;
                    CurveSample::new(k, c.x_star, k)
                })
                .collect(),
        );
        let k_top = js.k_bar.max(s0.k_dtilde) * 2.0;
        let sigma_tilde = Curve::new(
            "sigma_tilde",
            "K",
            (0..n)
                .map(|i| {
                    let k = s0.k_dtilde + (k_top - s0.k_dtilde) * i as f64 / (n - 1) as f64;
                    CurveSample::new(k, c.x_tilde, k)
                })
                .collect(),
        );

        let specials = Specials {
            x_tilde: c.x_tilde,
            x_star: c.x_star,
            k_tilde: c.k_tilde,
            k_star: c.k_star,
            k_tilde1: s0.k_tilde1,
            k_dtilde: s0.k_dtilde,
            x_breve: s0.x_breve,
            x_hat: s0.x_hat,
            k_hat: s0.k_hat,
            lambda_tilde: s0.lambda_tilde,
            x_s: js.x_s,
            k_bar: js.k_bar,
            case: js.case,
            meeting_point: js.meeting_point,
            k_dtilde1: js.k_dtilde1,
            xs_is_xbar: (js.x_s - c.x_bar).abs() <= 1e-9 * c.x_bar,
            sigma_s_pruned: js.pruned,
        };

        Ok(Self {
            model: *model,
            gamma1,
            gamma2: gam.gamma2,
            gamma3: gam.gamma3,
            gamma4: gam.gamma4,
            sigma_star,
            sigma_tilde,
            sigma0: s0.curve,
            sigma_s: js.curve,
            h1,
            h0: s0.h0,
            s0: s0.s0,
            l: s0.l,
            hs: js.hs,
            g_tau: js.g_tau,
            g_tau2: js.g_tau2,
            lambda_map: js.lambda_map,
            h3: gam.h3,
            h4: gam.h4,
            x_floor: gam.x_floor,
            sigma_s_split: js.split,
            specials,
        })
    }

    pub fn curves(&self) -> [&Curve; 8] {
        [
            &self.gamma1,
            &self.gamma2,
            &self.gamma3,
            &self.gamma4,
            &self.sigma_star,
            &self.sigma_tilde,
            &self.sigma0,
            &self.sigma_s,
        ]
    }

    /// K on Γ₄ at biomass x ∈ (0, x̃]; below the stored floor the curve is
    /// extended by integrating the moratorium flow.
    pub fn gamma4_k(&self, x: f64) -> Result<f64, CurveError> {
        if x >= self.x_floor {
            Ok(self.h4.eval(x.min(self.specials.x_tilde))?)
        } else {
            gamma4_level(&self.model, x, self.x_floor, self.h4.eval(self.x_floor)?)
        }
    }

    /// Σₛ sample lookup by x: which family (first or second) owns x.
    pub fn on_second_family(&self, x: f64) -> bool {
        match self.specials.meeting_point {
            Some((xp, _)) => x > xp,
            None => false,
        }
    }

    /// hₛ(x) by solving for the family member that lands exactly on x,
    /// rather than interpolating. Returns (K, K₁).
    pub fn hs_exact(&self, x: f64) -> Result<(f64, f64), CurveError> {
        let sp = &self.specials;
        let samples = &self.sigma_s.samples;
        let (lo, hi) = self.hs.domain();
        if !(x >= lo && x <= hi) {
            return Err(InterpError::OutOfDomain { x, lo, hi }.into());
        }
        if let Some(s) = samples.iter().find(|s| s.x == x) {
            return Ok((s.k, s.param));
        }
        let i = samples.partition_point(|s| s.x < x);
        let second = i >= self.sigma_s_split;
        let m = &self.model;
        let member = |k1: f64| {
            if second {
                jump_member_part2(m, k1, sp.k_dtilde, sp.lambda_tilde, false)
            } else {
                jump_member_part1(m, k1)
            }
        };
        let (a, b) = if second && i == self.sigma_s_split {
            // between the meeting point and the first second-family sample
            (sp.k_dtilde, samples[i].param)
        } else {
            (samples[i - 1].param, samples[i].param)
        };
        let gap = |k1: f64| -> Result<f64, RootError> {
            member(k1)
                .map(|mm| mm.x - x)
                .map_err(|e| RootError::Evaluation { at: k1, reason: e.to_string() })
        };
        let opts = crate::numeric::BrentOptions::default().with_x_tol(1e-15).with_f_tol(1e-15);
        let k1 = crate::numeric::brent(gap, a.min(b), a.max(b), opts)?;
        Ok((member(k1)?.k, k1))
    }

    pub fn specials_json(&self) -> String {
        serde_json::to_string_pretty(&self.specials).expect("specials serialize")
    }
}
