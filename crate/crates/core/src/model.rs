//! Production function, economic parameters, derived constants and the
//! auxiliary functions g, ψ, ψ* that drive every switching equation.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::{brent, BrentOptions, RootError};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("biomass {x} outside the domain (0, {x_bar}]")]
    Domain { x: f64, x_bar: f64 },
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("{function} has no sign change on (0, x_bar)")]
    NoRoot { function: &'static str },
    #[error("{function} changes sign {count} times on (0, x_bar); expected exactly once")]
    MultipleRoots { function: &'static str, count: usize },
    #[error("root refinement failed: {0}")]
    Root(#[from] RootError),
    #[error("parameter document: {0}")]
    Parse(String),
}

/// Concave growth law with equilibria at 0 and `x_bar`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "lowercase")]
pub enum Production {
    Logistic { a: f64, k: f64 },
}

impl Production {
    pub fn f(&self, x: f64) -> f64 {
        match *self {
            Production::Logistic { a, k } => a * x * (1.0 - x / k),
        }
    }

    pub fn df(&self, x: f64) -> f64 {
        match *self {
            Production::Logistic { a, k } => a * (1.0 - 2.0 * x / k),
        }
    }

    pub fn d2f(&self, _x: f64) -> f64 {
        match *self {
            Production::Logistic { a, k } => -2.0 * a / k,
        }
    }

    /// F(x)/x, including its limit at x = 0.
    pub fn per_capita(&self, x: f64) -> f64 {
        match *self {
            Production::Logistic { a, k } => a * (1.0 - x / k),
        }
    }

    /// d/dx of F(x)/x.
    pub fn per_capita_slope(&self, _x: f64) -> f64 {
        match *self {
            Production::Logistic { a, k } => -a / k,
        }
    }

    pub fn x_bar(&self) -> f64 {
        match *self {
            Production::Logistic { k, .. } => k,
        }
    }

    /// F(x + e) − F(x) without cancellation.
    pub fn f_increment(&self, x: f64, e: f64) -> f64 {
        match *self {
            Production::Logistic { a, k } => a * e * (1.0 - (2.0 * x + e) / k),
        }
    }

    /// F'(x + e) − F'(x).
    pub fn df_increment(&self, _x: f64, e: f64) -> f64 {
        match *self {
            Production::Logistic { a, k } => -2.0 * a * e / k,
        }
    }

    /// F(x + e)/(x + e) − F(x)/x.
    pub fn per_capita_increment(&self, _x: f64, e: f64) -> f64 {
        match *self {
            Production::Logistic { a, k } => -a * e / k,
        }
    }

    fn validate(&self) -> Result<(), ModelError> {
        match *self {
            Production::Logistic { a, k } => {
                positive("a", a)?;
                positive("k", k)
            }
        }
    }
}

fn positive(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            value,
            reason: "must be finite and > 0",
        })
    }
}

fn finite(name: &'static str, value: f64) -> Result<(), ModelError> {
    if value.is_finite() {
        Ok(())
    } else {
        Err(ModelError::InvalidParameter {
            name,
            value,
            reason: "must be finite",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub production: Production,
    pub delta: f64,
    pub gamma: f64,
    pub p: f64,
    pub c: f64,
    pub r: f64,
}

impl ModelParams {
    /// Logistic a = k = 1, δ = 1.5, γ = 0.1, p = 2, c = 0.5, r = 0.1.
    /// Every standing assumption holds and x̃ = 3/8 exactly.
    pub fn fix1() -> Self {
        Self {
            production: Production::Logistic { a: 1.0, k: 1.0 },
            delta: 1.5,
            gamma: 0.1,
            p: 2.0,
            c: 0.5,
            r: 0.1,
        }
    }

    pub fn from_json(text: &str) -> Result<Self, ModelError> {
        serde_json::from_str(text).map_err(|e| ModelError::Parse(e.to_string()))
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("params serialize")
    }

    pub fn kappa(&self) -> f64 {
        self.delta + self.gamma
    }

    pub fn r_prime(&self) -> f64 {
        self.r * self.kappa()
    }

    pub fn c_star(&self) -> f64 {
        self.c + self.r_prime()
    }

    pub fn x_bar(&self) -> f64 {
        self.production.x_bar()
    }

    /// g without domain checks; finite on all of [0, x̄].
    #[inline]
    pub fn g_raw(&self, x: f64) -> f64 {
        self.delta - self.production.df(x) + self.production.per_capita(x)
    }

    #[inline]
    pub fn psi_raw(&self, x: f64) -> f64 {
        self.psi_with_cost(x, self.c)
    }

    #[inline]
    pub fn psi_star_raw(&self, x: f64) -> f64 {
        self.psi_with_cost(x, self.c_star())
    }

    #[inline]
    fn psi_with_cost(&self, x: f64, cost: f64) -> f64 {
        let pr = &self.production;
        (self.p * x - cost) * (self.delta - pr.df(x)) - cost * pr.per_capita(x)
    }

    fn dpsi_with_cost(&self, x: f64, cost: f64) -> f64 {
        let pr = &self.production;
        self.p * (self.delta - pr.df(x)) - (self.p * x - cost) * pr.d2f(x)
            - cost * pr.per_capita_slope(x)
    }

    /// ψ*(x + e) − ψ*(x), accurate when e is tiny.
    pub fn psi_star_increment(&self, x: f64, e: f64) -> f64 {
        let pr = &self.production;
        let cs = self.c_star();
        self.p * e * (self.delta - pr.df(x + e))
            - (self.p * x - cs) * pr.df_increment(x, e)
            - cs * pr.per_capita_increment(x, e)
    }

    pub fn dpsi(&self, x: f64) -> f64 {
        self.dpsi_with_cost(x, self.c)
    }

    pub fn dpsi_star(&self, x: f64) -> f64 {
        self.dpsi_with_cost(x, self.c_star())
    }

    pub fn dg(&self, x: f64) -> f64 {
        -self.production.d2f(x) + self.production.per_capita_slope(x)
    }

    fn check_domain(&self, x: f64) -> Result<(), ModelError> {
        let x_bar = self.x_bar();
        if x > 0.0 && x <= x_bar {
            Ok(())
        } else {
            Err(ModelError::Domain { x, x_bar })
        }
    }

    /// g(x) = δ − F'(x) + F(x)/x on (0, x̄].
    pub fn eval_g(&self, x: f64) -> Result<f64, ModelError> {
        self.check_domain(x)?;
        Ok(self.g_raw(x))
    }

    /// Limit of g as x → 0⁺.
    pub fn g_at_zero(&self) -> f64 {
        self.g_raw(0.0)
    }

    pub fn eval_psi(&self, x: f64) -> Result<f64, ModelError> {
        self.check_domain(x)?;
        Ok(self.psi_raw(x))
    }

    pub fn eval_psi_star(&self, x: f64) -> Result<f64, ModelError> {
        self.check_domain(x)?;
        Ok(self.psi_star_raw(x))
    }

    fn validate(&self) -> Result<(), ModelError> {
        self.production.validate()?;
        finite("delta", self.delta)?;
        finite("gamma", self.gamma)?;
        finite("p", self.p)?;
        finite("c", self.c)?;
        finite("r", self.r)
    }

    /// Checks every standing assumption on a uniform interior grid.
    pub fn verify_assumptions(&self, grid_size: usize) -> AssumptionReport {
        let grid_size = grid_size.max(100);
        let x_bar = self.x_bar();
        let grid: Vec<f64> = (1..=grid_size)
            .map(|i| x_bar * i as f64 / (grid_size + 1) as f64)
            .collect();
        let pr = self.production;
        let mut checks = Vec::with_capacity(6);

        // V1
        let mut msgs = Vec::new();
        let tol = 1e-14 * x_bar.max(1.0);
        if pr.f(0.0).abs() > tol || pr.f(x_bar).abs() > tol {
            msgs.push(format!("F(0) = {}, F(x_bar) = {}", pr.f(0.0), pr.f(x_bar)));
        }
        if let Some(x) = grid.iter().find(|&&x| pr.f(x) <= 0.0) {
            msgs.push(format!("F({x}) <= 0"));
        }
        let closed = std::iter::once(0.0).chain(grid.iter().copied()).chain(std::iter::once(x_bar));
        if let Some(x) = closed.into_iter().find(|&x| pr.d2f(x) >= 0.0) {
            msgs.push(format!("F''({x}) >= 0"));
        }
        checks.push(Check::new("V1", msgs));

        // V2
        let mut msgs = Vec::new();
        for (name, v) in [("delta", self.delta), ("r", self.r), ("c", self.c), ("gamma", self.gamma)] {
            if !(v > 0.0) {
                msgs.push(format!("{name} = {v} is not > 0"));
            }
        }
        checks.push(Check::new("V2", msgs));

        // V3
        let v3 = self.c_star() - self.p * x_bar;
        let msgs = if v3 < 0.0 {
            vec![]
        } else {
            vec![format!("c_star - p*x_bar = {v3} is not < 0")]
        };
        checks.push(Check::new("V3", msgs));

        // V4
        let mut msgs = Vec::new();
        let roots = (
            single_root(|x| self.psi_raw(x), x_bar, "psi"),
            single_root(|x| self.psi_star_raw(x), x_bar, "psi_star"),
        );
        for (name, root) in [("psi", &roots.0), ("psi_star", &roots.1)] {
            if let Err(e) = root {
                msgs.push(format!("{name}: {e}"));
            }
        }
        if let (Ok(xt), Ok(xs)) = (&roots.0, &roots.1) {
            for &x in &grid {
                let want_psi = if x < *xt { -1.0 } else { 1.0 };
                let want_star = if x < *xs { -1.0 } else { 1.0 };
                if (x - xt).abs() > 1e-8 && self.psi_raw(x).signum() != want_psi {
                    msgs.push(format!("psi has the wrong sign at {x}"));
                    break;
                }
                if (x - xs).abs() > 1e-8 && self.psi_star_raw(x).signum() != want_star {
                    msgs.push(format!("psi_star has the wrong sign at {x}"));
                    break;
                }
            }
        }
        checks.push(Check::new("V4", msgs));

        // V5, independent of V4 except for where x̃ sits
        let mut msgs = Vec::new();
        match &roots.0 {
            Ok(xt) => {
                if let Some(x) = grid.iter().find(|&&x| x < *xt && self.dpsi(x) <= 0.0) {
                    msgs.push(format!("psi'({x}) <= 0 on (0, x_tilde)"));
                }
                if let Some(x) = grid.iter().find(|&&x| x > *xt && self.dpsi_star(x) <= 0.0) {
                    msgs.push(format!("psi_star'({x}) <= 0 on (x_tilde, x_bar)"));
                }
                if self.dpsi(0.0) <= 0.0 {
                    msgs.push(format!("psi'(0) = {} <= 0", self.dpsi(0.0)));
                }
            }
            Err(_) => msgs.push("x_tilde undefined, cannot locate the V5 intervals".into()),
        }
        checks.push(Check::new("V5", msgs));

        // V6
        let msgs = match grid.iter().find(|&&x| self.dg(x) <= 0.0) {
            Some(x) => vec![format!("g'({x}) <= 0")],
            None => vec![],
        };
        checks.push(Check::new("V6", msgs));

        AssumptionReport {
            all_pass: checks.iter().all(|c| c.pass),
            checks,
            grid_size,
        }
    }
}

/// Locates the unique sign change of `f` on (0, x̄) with a 1024-point scan
/// followed by Brent refinement.
fn single_root<F: Fn(f64) -> f64>(f: F, x_bar: f64, function: &'static str) -> Result<f64, ModelError> {
    const SCAN: usize = 1024;
    let xs: Vec<f64> = (1..SCAN).map(|i| x_bar * i as f64 / SCAN as f64).collect();
    let mut brackets = Vec::new();
    for w in xs.windows(2) {
        let (fa, fb) = (f(w[0]), f(w[1]));
        if fa == 0.0 {
            brackets.push((w[0], w[0]));
        } else if fa * fb < 0.0 {
            brackets.push((w[0], w[1]));
        }
    }
    match brackets.len() {
        0 => Err(ModelError::NoRoot { function }),
        1 => {
            let (a, b) = brackets[0];
            if a == b {
                return Ok(a);
            }
            let opts = BrentOptions::default().with_x_tol(1e-13).with_f_tol(1e-12);
            Ok(brent(|x| Ok(f(x)), a, b, opts)?)
        }
        count => Err(ModelError::MultipleRoots { function, count }),
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Check {
    pub name: String,
    pub pass: bool,
    pub message: String,
}

impl Check {
    fn new(name: &str, failures: Vec<String>) -> Self {
        Self {
            name: name.to_string(),
            pass: failures.is_empty(),
            message: if failures.is_empty() {
                "ok".into()
            } else {
                failures.join("; ")
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AssumptionReport {
    pub all_pass: bool,
    pub checks: Vec<Check>,
    pub grid_size: usize,
}

impl AssumptionReport {
    pub fn check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub kappa: f64,
    pub r_prime: f64,
    pub c_star: f64,
    pub x_tilde: f64,
    pub x_star: f64,
    #[serde(rename = "K_tilde")]
    pub k_tilde: f64,
    #[serde(rename = "K_star")]
    pub k_star: f64,
    pub x_bar: f64,
}

/// Parameters together with their derived constants. Cheap to copy.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Model {
    pub params: ModelParams,
    pub constants: DerivedConstants,
}

impl Model {
    pub fn new(params: ModelParams) -> Result<Self, ModelError> {
        Ok(Self {
            params,
            constants: derive_constants(&params)?,
        })
    }

    pub fn fix1() -> Self {
        Self::new(ModelParams::fix1()).expect("default parameters are valid")
    }

    pub fn f(&self, x: f64) -> f64 {
        self.params.production.f(x)
    }

    pub fn per_capita(&self, x: f64) -> f64 {
        self.params.production.per_capita(x)
    }

    pub fn g(&self, x: f64) -> f64 {
        self.params.g_raw(x)
    }

    pub fn psi(&self, x: f64) -> f64 {
        self.params.psi_raw(x)
    }

    pub fn psi_star(&self, x: f64) -> f64 {
        self.params.psi_star_raw(x)
    }

    pub fn x_bar(&self) -> f64 {
        self.constants.x_bar
    }

    /// Discounted value of holding (x*, K*) forever with u = 1 and
    /// investment density γK*.
    pub fn stationary_value(&self) -> f64 {
        let p = &self.params;
        let c = &self.constants;
        c.k_star * (p.r * p.gamma + p.c - p.p * c.x_star) / p.delta
    }
}

/// κ, r', c*, the roots x̃ and x* of ψ and ψ*, and the K-levels on F(x) = Kx.
pub fn derive_constants(params: &ModelParams) -> Result<DerivedConstants, ModelError> {
    params.validate()?;
    let x_bar = params.x_bar();
    let x_tilde = single_root(|x| params.psi_raw(x), x_bar, "psi")?;
    let x_star = single_root(|x| params.psi_star_raw(x), x_bar, "psi_star")?;
    let pr = params.production;
    Ok(DerivedConstants {
        kappa: params.kappa(),
        r_prime: params.r_prime(),
        c_star: params.c_star(),
        x_tilde,
        x_star,
        k_tilde: pr.per_capita(x_tilde),
        k_star: pr.per_capita(x_star),
        x_bar,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;
    use proptest::prelude::*;

    // Closed forms for logistic a = k = 1 with the default economics.
    fn psi_poly(x: f64) -> f64 {
        4.0 * x * x + 0.5 * x - 0.75
    }
    fn psi_star_poly(x: f64) -> f64 {
        4.0 * x * x + 0.34 * x - 0.99
    }

    #[test]
    fn g_simplifies_for_logistic() {
        let p = ModelParams::fix1();
        assert_abs_diff_eq!(p.eval_g(0.375).unwrap(), 1.875, epsilon = 1e-15);
        assert_eq!(p.g_at_zero(), 1.5);
        assert!(p.eval_g(0.0).is_err());
        assert!(p.eval_g(1.0 + 1e-9).is_err());
        assert!(p.eval_g(1.0).is_ok());
    }

    #[test]
    fn psi_matches_expanded_polynomials() {
        let p = ModelParams::fix1();
        for i in 1..=1000 {
            let x = i as f64 / 1000.0;
            assert_abs_diff_eq!(p.psi_raw(x), psi_poly(x), epsilon = 1e-14);
            assert_abs_diff_eq!(p.psi_star_raw(x), psi_star_poly(x), epsilon = 1e-14);
        }
        assert_eq!(p.eval_psi(0.375).unwrap(), 0.0);
    }

    #[test]
    fn fix1_constants_match_quadratic_formula() {
        let c = derive_constants(&ModelParams::fix1()).unwrap();
        assert_abs_diff_eq!(c.kappa, 1.6, epsilon = 1e-15);
        assert_abs_diff_eq!(c.r_prime, 0.16, epsilon = 1e-15);
        assert_abs_diff_eq!(c.c_star, 0.66, epsilon = 1e-15);
        assert_abs_diff_eq!(c.x_tilde, 0.375, epsilon = 1e-12);
        assert_abs_diff_eq!(c.k_tilde, 0.625, epsilon = 1e-12);
        let xs = (-0.34 + (0.34f64 * 0.34 + 16.0 * 0.99).sqrt()) / 8.0;
        assert_abs_diff_eq!(c.x_star, xs, epsilon = 1e-12);
        assert_abs_diff_eq!(c.k_star, 1.0 - xs, epsilon = 1e-12);
        assert!(c.x_tilde < c.x_star && c.k_tilde > c.k_star);
    }

    #[test]
    fn derive_is_bit_reproducible() {
        let a = derive_constants(&ModelParams::fix1()).unwrap();
        let b = derive_constants(&ModelParams::fix1()).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
    }

    #[test]
    fn fix1_passes_every_assumption() {
        let report = ModelParams::fix1().verify_assumptions(1000);
        assert!(report.all_pass, "{report:?}");
        assert_eq!(report.checks.len(), 6);
    }

    #[test]
    fn low_discount_breaks_v5() {
        let mut p = ModelParams::fix1();
        p.delta = 0.05;
        // ψ'(0) = p(δ − a) − c·a/k
        assert_abs_diff_eq!(p.dpsi(0.0), 2.0 * (0.05 - 1.0) - 0.5, epsilon = 1e-14);
        let report = p.verify_assumptions(1000);
        assert!(!report.check("V5").unwrap().pass);
        assert!(!report.all_pass);
    }

    #[test]
    fn zero_price_breaks_v3() {
        let mut p = ModelParams::fix1();
        p.p = 0.0;
        assert!(!p.verify_assumptions(200).check("V3").unwrap().pass);
    }

    #[test]
    fn zero_depreciation_breaks_v2() {
        let mut p = ModelParams::fix1();
        p.gamma = 0.0;
        let report = p.verify_assumptions(200);
        assert!(!report.check("V2").unwrap().pass);
    }

    #[test]
    fn no_root_is_reported() {
        let mut p = ModelParams::fix1();
        p.p = 0.1; // ψ stays negative on (0, 1)
        assert!(matches!(derive_constants(&p), Err(ModelError::NoRoot { .. })));
    }

    #[test]
    fn params_json_roundtrip() {
        let text = r#"{"production":{"type":"logistic","a":1.0,"k":1.0},
            "delta":1.5,"gamma":0.1,"p":2.0,"c":0.5,"r":0.1}"#;
        assert_eq!(ModelParams::from_json(text).unwrap(), ModelParams::fix1());
        let again = ModelParams::from_json(&ModelParams::fix1().to_json()).unwrap();
        assert_eq!(again, ModelParams::fix1());
        assert!(ModelParams::from_json("{").is_err());
    }

    #[test]
    fn stationary_value_fix1() {
        let m = Model::fix1();
        let c = m.constants;
        let expected = c.k_star * (0.01 + 0.5 - 2.0 * c.x_star) / 1.5;
        assert_abs_diff_eq!(m.stationary_value(), expected, epsilon = 1e-15);
        assert_abs_diff_eq!(m.stationary_value(), -0.1461596389, epsilon = 1e-10);
    }

    proptest! {
        #[test]
        fn increments_match_differences(x in 0.01f64..0.9, e in -0.005f64..0.005) {
            let p = ModelParams::fix1();
            let pr = p.production;
            prop_assert!((pr.f_increment(x, e) - (pr.f(x + e) - pr.f(x))).abs() < 1e-15);
            prop_assert!((pr.df_increment(x, e) - (pr.df(x + e) - pr.df(x))).abs() < 1e-15);
            let dpsi = p.psi_star_raw(x + e) - p.psi_star_raw(x);
            prop_assert!((p.psi_star_increment(x, e) - dpsi).abs() < 1e-14);
        }

        #[test]
        fn psi_gap_is_r_prime_times_g(x in 1e-9f64..1.0) {
            let p = ModelParams::fix1();
            let gap = p.psi_raw(x) - p.psi_star_raw(x) - p.r_prime() * p.g_raw(x);
            prop_assert!(gap.abs() < 1e-12);
        }

        #[test]
        fn g_increases_by_finite_difference(x in 1e-6f64..(1.0 - 2e-6)) {
            let p = ModelParams::fix1();
            prop_assert!(p.g_raw(x + 1e-6) > p.g_raw(x));
        }

        #[test]
        fn psi_has_one_sign_change(x in 1e-6f64..1.0) {
            let p = ModelParams::fix1();
            prop_assume!((x - 0.375).abs() > 1e-8);
            let s = p.psi_raw(x).signum();
            prop_assert_eq!(s, if x < 0.375 { -1.0 } else { 1.0 });
        }
    }
}
