use harvest_core::curves::{jump_member_part1, PhasePortrait};
use harvest_core::Model;

fn portrait() -> PhasePortrait {
    PhasePortrait::build(&Model::fix1()).unwrap()
}

#[test]
fn fix1_specials() {
    let p = portrait();
    let sp = p.specials;
    assert!((sp.k_tilde1 - 0.45128712396993).abs() < 1e-8);
    assert!((sp.k_dtilde - 0.65865393573511).abs() < 1e-8);
    assert!((sp.x_hat - 0.369594).abs() < 1e-5);
    assert!(sp.x_hat < sp.x_tilde);
    assert!(sp.xs_is_xbar);
    let (px, pk) = sp.meeting_point.unwrap();
    assert!((px - 0.60805).abs() < 1e-4 && (pk - 0.84672).abs() < 1e-4);
}

#[test]
fn curves_are_ordered() {
    let p = portrait();
    let c = p.model.constants;
    // Σ₀ runs from the origin member up to (x̃, K̃̃).
    let first = p.sigma0.first();
    let last = p.sigma0.last();
    assert!(first.k < 1e-12 && (last.x - c.x_tilde).abs() < 1e-6);
    // Γ₃ leaves (x̃, K̃̃) and ends on x̄; Γ₄ climbs as x falls.
    assert!((p.gamma3.last().x - c.x_bar).abs() < 1e-9);
    let (xs, ks) = p.h4.breakpoints();
    assert!(xs.windows(2).all(|w| w[1] > w[0]) && ks.windows(2).all(|w| w[1] < w[0]));
    // Σₛ sits above Γ₁ and reaches x̄ at K̄.
    assert!((p.hs.domain().1 - c.x_bar).abs() < 1e-9);
    assert!((p.specials.k_bar - p.hs.eval(c.x_bar).unwrap()).abs() < 1e-9);
}

#[test]
fn hs_exact_agrees_with_interpolation() {
    let p = portrait();
    let (lo, hi) = p.hs.domain();
    for i in 1..20 {
        let x = lo + (hi - lo) * i as f64 / 20.0;
        let (k, _) = p.hs_exact(x).unwrap();
        assert!((k - p.hs.eval(x).unwrap()).abs() < 1e-4, "x = {x}");
    }
    assert!(p.hs_exact(lo - 1e-3).is_err());
}

#[test]
fn jump_members_return_to_lambda_r() {
    let m = Model::fix1();
    let c = m.constants;
    for k1 in [0.46, 0.5, 0.54] {
        let j = jump_member_part1(&m, k1).unwrap();
        assert!(j.tau > 0.0 && j.x > c.x_star && j.k > c.k_star);
        assert!((j.lambda - m.params.r).abs() < 1e-9);
    }
    let at = jump_member_part1(&m, c.k_star).unwrap();
    assert_eq!(at.tau, 0.0);
}
