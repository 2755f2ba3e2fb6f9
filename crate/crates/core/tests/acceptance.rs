//! Acceptance suite for the default parameters. Runs every criterion, prints one
//! PASS/FAIL line per criterion and exits non-zero if any fails.

use std::process::ExitCode;
use std::time::{Duration, Instant};

use harvest_core::curves::{build_sigma0, jump_member_part1, PhasePortrait};
use harvest_core::dynamics::{
    evaluate_objective, integrate_state, switch_forms, ControlMode, ControlTrace, ImpulseMeasure, OdeOptions, State,
    TailRule,
};
use harvest_core::model::{Model, ModelParams, Production};
use harvest_core::policy::{classify, rollout, RolloutOptions};
use harvest_core::verify::{
    condition_sweep, dominance_test, jump_target_scan, representative_starts, small_capital_comparison, OracleGrid,
};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const HORIZON: f64 = 40.0;

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn assumption_gate() -> Outcome {
    let params = ModelParams::fix1();
    let report = params.verify_assumptions(1000);
    for name in ["V1", "V2", "V3", "V4", "V5", "V6"] {
        let check = report.check(name).ok_or_else(|| format!("{name} missing"))?;
        ensure(check.pass, || format!("{name}: {}", check.message))?;
    }
    let model = Model::new(params).map_err(|e| e.to_string())?;
    let c = model.constants;
    // ψ is quadratic for logistic growth.
    let Production::Logistic { a, k } = params.production;
    let (p, cost, d) = (params.p, params.c, params.delta);
    let qa = 2.0 * a * p / k;
    let qb = p * (d - a) - 2.0 * a * cost / k + cost * a / k;
    let qc = -cost * (d - a) - cost * a;
    let root = (-qb + (qb * qb - 4.0 * qa * qc).sqrt()) / (2.0 * qa);
    ensure((c.x_tilde - root).abs() <= 1e-12, || format!("x_tilde {} vs quadratic {root}", c.x_tilde))?;
    ensure((c.x_tilde - 0.375).abs() <= 1e-12, || format!("x_tilde {}", c.x_tilde))?;
    ensure(c.x_tilde < c.x_star && c.k_tilde > c.k_star, || "ordering of singular levels".into())?;
    Ok(format!("x_tilde={:.15} x_star={:.15}", c.x_tilde, c.x_star))
}

fn identity_suite(portrait: &PhasePortrait) -> Outcome {
    let m = &portrait.model;
    let rp = m.constants.r_prime;
    let mut worst_identity: f64 = 0.0;
    for i in 1..=1000 {
        let x = m.x_bar() * i as f64 / 1000.0;
        worst_identity = worst_identity.max((m.psi(x) - m.psi_star(x) - rp * m.g(x)).abs());
    }
    ensure(worst_identity <= 1e-12, || format!("psi identity residual {worst_identity:e}"))?;

    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let mut worst_z: f64 = 0.0;
    let mut worst_l: f64 = 0.0;
    let mut runs = 0;
    let mut points = 0;
    while runs < 10 {
        let x = rng.gen_range(0.02..0.98);
        let k = rng.gen_range(0.02..2.0);
        if !classify(portrait, x, k).is_open() {
            continue;
        }
        let ro = rollout(portrait, x, k, &RolloutOptions::default()).map_err(|e| format!("rollout ({x}, {k}): {e}"))?;
        for s in ro.trajectory.samples(0.05) {
            let f = switch_forms(m, s.x, s.u, s.z, s.lambda);
            worst_z = worst_z.max((f.z_direct - f.z_shifted).abs());
            worst_l = worst_l.max((f.lambda_direct - f.lambda_shifted).abs());
            points += 1;
        }
        runs += 1;
    }
    ensure(worst_z <= 1e-10 && worst_l <= 1e-10, || format!("switch forms differ: z {worst_z:e}, lambda {worst_l:e}"))?;
    Ok(format!(
        "identity {worst_identity:.1e}; z forms {worst_z:.1e}, lambda forms {worst_l:.1e} over {points} samples"
    ))
}

fn integrator_oracle(model: &Model) -> Outcome {
    let p = model.params;
    let (x0, k0) = (0.1, 0.8);
    let atoms = [(0.5, 0.3), (1.5, 0.7)];
    let measure = ImpulseMeasure::new(
        atoms.iter().map(|&(t, size)| harvest_core::dynamics::Atom { t, size }).collect(),
        vec![],
    )
    .map_err(|e| e.to_string())?;
    let ctl = ControlTrace::constant(ControlMode::Zero, 10.0);
    let traj = integrate_state(model, State::new(x0, k0), &ctl, &measure, 10.0, &OdeOptions::default())
        .map_err(|e| e.to_string())?;
    let logistic = |t: f64| x0 * t.exp() / (1.0 + x0 * t.exp_m1());
    let capital = |t: f64| {
        let mut k = k0 * (-p.gamma * t).exp();
        for &(ta, h) in &atoms {
            if t >= ta {
                k += h * (-p.gamma * (t - ta)).exp();
            }
        }
        k
    };
    let mut worst: f64 = 0.0;
    for i in 0..=10_000 {
        let t = i as f64 * 1e-3;
        let y = traj.state_at(t).ok_or("sample outside trajectory")?;
        worst = worst.max((y[0] - logistic(t)).abs()).max((y[1] - capital(t)).abs());
    }
    let j_exact: f64 = atoms.iter().map(|&(t, h)| p.r * h * (-p.delta * t).exp()).sum();
    let j = evaluate_objective(&traj, 10.0, TailRule::Zero).map_err(|e| e.to_string())?;
    ensure(worst <= 1e-9, || format!("state error {worst:e}"))?;
    ensure((j - j_exact).abs() <= 1e-9, || format!("objective {j} vs {j_exact}"))?;
    Ok(format!("max state error {worst:.1e} on 10001 points"))
}

fn curve_structure(model: &Model) -> Outcome {
    let portrait = PhasePortrait::build(model).map_err(|e| e.to_string())?;
    let c = model.constants;
    let sp = &portrait.specials;
    for map in [&portrait.h1, &portrait.h0, &portrait.l, &portrait.g_tau] {
        let (xs, ys) = map.breakpoints();
        let ok = xs.windows(2).all(|w| w[1] > w[0]);
        ensure(ok, || format!("{} grid not increasing", map.name))?;
        let inc = ys.windows(2).all(|w| w[1] > w[0]);
        let dec = ys.windows(2).all(|w| w[1] < w[0]);
        let want_inc = map.name != "g_tau";
        ensure(if want_inc { inc } else { dec }, || format!("{} not strictly monotone", map.name))?;
    }
    let h1_at = portrait.h1.eval(c.x_star).map_err(|e| e.to_string())?;
    ensure((h1_at - c.k_star).abs() <= 1e-8, || format!("h1(x*) = {h1_at}"))?;
    // Tangent of the backward full-effort flow at the start of Γ₁.
    let s = portrait.gamma1.first();
    let tangent = (-model.f(s.x) + s.k * s.x, model.params.gamma * s.k);
    ensure(
        tangent.0.abs() <= 1e-8 && (tangent.1 - model.params.gamma * c.k_star).abs() <= 1e-8,
        || format!("gamma1 tangent {tangent:?}"),
    )?;

    let s0 = build_sigma0(model).map_err(|e| e.to_string())?;
    let top = s0.tangency;
    ensure((top.x - c.x_tilde).abs() <= 1e-6, || format!("sigma0 endpoint x {}", top.x))?;
    ensure(top.dz.abs() <= 1e-8, || format!("sigma0 endpoint z' {:e}", top.dz))?;
    ensure(sp.k_dtilde > c.k_tilde, || format!("K_dtilde {} <= K_tilde", sp.k_dtilde))?;
    let endpoint = (model.f(sp.x_hat) - sp.k_hat * sp.x_hat).abs();
    ensure(endpoint <= 1e-6, || format!("|F(x_hat) - K_hat x_hat| = {endpoint:e}"))?;
    let end = portrait.gamma2.last();
    let landing = (end.x - c.x_star).abs().max((end.k - sp.k_tilde1).abs());
    ensure(landing <= 1e-6, || format!("gamma2 lands {landing:e} from (x*, K_tilde1)"))?;
    Ok(format!(
        "K_tilde1={:.8} K_dtilde={:.8} x_hat={:.6} case {:?}; sigma0 z'={:.1e}",
        sp.k_tilde1, sp.k_dtilde, sp.x_hat, sp.case, top.dz
    ))
}

fn jump_slope(portrait: &PhasePortrait) -> Outcome {
    let m = &portrait.model;
    let ks = m.constants.k_star;
    let expected = -4.0 / (m.params.gamma * ks);
    let eps = 1e-6;
    let a = jump_member_part1(m, ks - eps).map_err(|e| e.to_string())?;
    let b = jump_member_part1(m, ks - 2.0 * eps).map_err(|e| e.to_string())?;
    let slope = (a.tau - b.tau) / eps;
    let rel = (slope / expected - 1.0).abs();
    ensure(rel <= 0.05, || format!("tau' = {slope} vs {expected}"))?;

    // The continuation runs from K* downward; its last step toward K* is the
    // smallest nonzero τ.
    let (k1s, taus) = portrait.g_tau.breakpoints();
    let final_tau = k1s
        .iter()
        .zip(taus)
        .filter(|(&k, _)| k < ks)
        .map(|(_, &t)| t)
        .fold(f64::INFINITY, f64::min);
    ensure(final_tau < 1e-3, || format!("final tau {final_tau}"))?;

    let (lo1, hi1) = portrait.h1.domain();
    let (lo_s, hi_s) = portrait.hs.domain();
    let (lo, hi) = (lo1.max(lo_s), hi1.min(hi_s));
    let mut worst_gap = f64::INFINITY;
    for i in 1..1000 {
        let x = lo + (hi - lo) * i as f64 / 1000.0;
        let gap = portrait.hs.eval(x).unwrap() - portrait.h1.eval(x).unwrap();
        worst_gap = worst_gap.min(gap);
    }
    ensure(worst_gap > 0.0, || format!("hs - h1 reaches {worst_gap:e}"))?;
    Ok(format!(
        "tau' = {slope:.4} vs {expected:.4} ({:.2}%), final tau {final_tau:.1e}, min(hs - h1) {worst_gap:.2e}",
        100.0 * rel
    ))
}

fn stationarity(portrait: &PhasePortrait) -> Outcome {
    let m = &portrait.model;
    let c = m.constants;
    let ro = rollout(portrait, c.x_star, c.k_star, &RolloutOptions::default()).map_err(|e| e.to_string())?;
    let mut worst: f64 = 0.0;
    for i in 0..=2000 {
        let y = ro.trajectory.state_at(i as f64 * 0.01).ok_or("sample outside trajectory")?;
        worst = worst.max((y[0] - c.x_star).abs()).max((y[1] - c.k_star).abs());
    }
    let p = m.params;
    let closed = c.k_star * (p.r * p.gamma + p.c - p.p * c.x_star) / p.delta;
    ensure(worst <= 1e-8, || format!("drift {worst:e}"))?;
    ensure((ro.value - closed).abs() <= 1e-9, || format!("J {} vs {closed}", ro.value))?;
    Ok(format!("drift {worst:.1e}, J = {:.10}", ro.value))
}

fn condition_sweep_check(portrait: &PhasePortrait) -> Outcome {
    let sweep = condition_sweep(portrait, 20, 2.0, HORIZON);
    let first_failure = sweep.entries.iter().find(|e| !e.pass);
    ensure(sweep.pass, || {
        let e = first_failure.unwrap();
        format!("{} failures; first at ({}, {}) {:?}", sweep.failures, e.x, e.k, e.error)
    })?;
    ensure(sweep.max_lambda_excess <= 1e-6, || format!("max(lambda - r) {}", sweep.max_lambda_excess))?;
    ensure(sweep.max_atom_complementarity <= 1e-6, || "atom complementarity".into())?;
    ensure(sweep.bang_violations == 0, || format!("{} bang-bang violations", sweep.bang_violations))?;
    ensure(sweep.max_terminal_distance <= 1e-6, || format!("terminal distance {}", sweep.max_terminal_distance))?;
    Ok(format!(
        "{} supported starts; max(lambda - r) {:.1e}, atom residual {:.1e}, terminal {:.1e}",
        sweep.supported, sweep.max_lambda_excess, sweep.max_atom_complementarity, sweep.max_terminal_distance
    ))
}

fn dominance(portrait: &PhasePortrait) -> Outcome {
    let grid = OracleGrid::standard(HORIZON);
    let starts = representative_starts(portrait);
    ensure(starts.len() >= 10, || format!("only {} starts", starts.len()))?;
    let mut regions = std::collections::BTreeSet::new();
    let mut worst = f64::INFINITY;
    let mut fewest = usize::MAX;
    for &(x, k) in &starts {
        let rep = dominance_test(portrait, x, k, None, HORIZON, Some(&grid)).map_err(|e| format!("({x}, {k}): {e}"))?;
        ensure(rep.evaluated >= 50, || format!("({x}, {k}): {} perturbations", rep.evaluated))?;
        ensure(rep.pass, || format!("({x}, {k}) {}: worst margin {:e}", rep.region, rep.worst_margin))?;
        regions.insert(rep.region.tag());
        worst = worst.min(rep.worst_margin);
        fewest = fewest.min(rep.evaluated);
    }
    let sp = &portrait.specials;
    let mut scans = Vec::new();
    let mut xs = vec![0.5 * (sp.x_star + sp.meeting_point.map_or(portrait.model.x_bar(), |p| p.0))];
    if let Some((xp, _)) = sp.meeting_point {
        xs.push(0.5 * (xp + portrait.model.x_bar()));
    }
    for x in xs {
        let hs = portrait.hs.eval(x).map_err(|e| e.to_string())?;
        let scan = jump_target_scan(portrait, x, 0.2 * hs, 200, HORIZON).map_err(|e| e.to_string())?;
        ensure(scan.pass, || format!("scan at x = {x}: argmin {} vs hs {}", scan.argmin, scan.hs))?;
        scans.push(format!("x={x:.3}: |argmin - hs| = {:.2} steps", (scan.argmin - scan.hs).abs() / scan.step));
    }
    Ok(format!(
        "{} starts, {} regions, >= {fewest} perturbations each, worst margin {worst:.1e}; {}",
        starts.len(),
        regions.len(),
        scans.join(", ")
    ))
}

fn small_capital(model: &Model) -> Outcome {
    let lc = small_capital_comparison(model, HORIZON).map_err(|e| e.to_string())?;
    ensure(lc.pass && lc.margin > 0.0, || format!("margin {}", lc.margin))?;
    Ok(format!("start ({:.3}, {:.4}), atom {:.4}, margin {:.4}", lc.x0, lc.k0, lc.jump, lc.margin))
}

struct Criterion<'a> {
    id: u32,
    name: &'static str,
    limit: Option<Duration>,
    run: Box<dyn Fn() -> Outcome + 'a>,
}

fn main() -> ExitCode {
    let model = Model::fix1();
    let built = Instant::now();
    let portrait = match PhasePortrait::build(&model) {
        Ok(p) => p,
        Err(e) => {
            println!("portrait construction failed: {e}");
            return ExitCode::FAILURE;
        }
    };
    println!("portrait built in {:.2} s", built.elapsed().as_secs_f64());

    let secs = Duration::from_secs;
    let criteria = [
        Criterion { id: 1, name: "assumption gate", limit: Some(secs(1)), run: Box::new(assumption_gate) },
        Criterion { id: 2, name: "identity suite", limit: None, run: Box::new(|| identity_suite(&portrait)) },
        Criterion { id: 3, name: "integrator oracle", limit: None, run: Box::new(|| integrator_oracle(&model)) },
        Criterion { id: 4, name: "curve structure", limit: Some(secs(20)), run: Box::new(|| curve_structure(&model)) },
        Criterion { id: 5, name: "jump-curve slope", limit: None, run: Box::new(|| jump_slope(&portrait)) },
        Criterion { id: 6, name: "stationarity", limit: None, run: Box::new(|| stationarity(&portrait)) },
        Criterion { id: 7, name: "necessary-condition sweep", limit: Some(secs(60)), run: Box::new(|| condition_sweep_check(&portrait)) },
        Criterion { id: 8, name: "dominance", limit: Some(secs(120)), run: Box::new(|| dominance(&portrait)) },
        Criterion { id: 9, name: "small-capital jump", limit: None, run: Box::new(|| small_capital(&model)) },
    ];

    let mut failed = 0;
    for c in &criteria {
        let start = Instant::now();
        let mut outcome = (c.run)();
        let elapsed = start.elapsed();
        if let (Ok(_), Some(limit)) = (&outcome, c.limit) {
            if elapsed > limit {
                outcome = Err(format!("took {:.2} s, limit {} s", elapsed.as_secs_f64(), limit.as_secs()));
            }
        }
        let (status, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        if outcome.is_err() {
            failed += 1;
        }
        println!("criterion {} ({}): {status} [{:.2} s] {detail}", c.id, c.name, elapsed.as_secs_f64());
    }
    println!("acceptance: {} of {} criteria passed", criteria.len() - failed, criteria.len());
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
