use std::sync::OnceLock;

use harvest_core::policy::{classify, rollout, synthesize, value, Phase, Region, RolloutOptions};
use harvest_core::{Model, PhasePortrait};
use proptest::prelude::*;

fn portrait() -> &'static PhasePortrait {
    static P: OnceLock<PhasePortrait> = OnceLock::new();
    P.get_or_init(|| PhasePortrait::build(&Model::fix1()).unwrap())
}

fn expected_first_phase(region: Region) -> &'static [&'static str] {
    match region {
        Region::R1 => &["JumpTo"],
        Region::R2 | Region::Gamma3 | Region::SigmaS => &["BangOne"],
        Region::R3 | Region::R4 | Region::Gamma4 | Region::Sigma0 => &["Moratorium", "BangOne"],
        Region::R5 => &["JumpTo", "BangOne"],
        Region::SigmaTilde => &["SingularTildeArc"],
        Region::SigmaStar => &["JumpTo"],
        Region::SingularPoint => &["StationaryForever"],
        Region::SingularTilde => &["SingularTildeArc", "BangOne"],
        _ => &[],
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn schedules_match_their_region(x in 0.01f64..0.99, k in 0.01f64..2.5) {
        let p = portrait();
        let region = classify(p, x, k);
        prop_assume!(region.is_open());
        let s = synthesize(p, x, k).unwrap();
        prop_assert_eq!(s.region, region);
        let first = s.phases[0].name();
        prop_assert!(expected_first_phase(region).contains(&first), "{region}: {first}");
        // At most one atom before Σ*; the capture onto K* happens there.
        let n = s.phases.len();
        let atoms_before = s.phases[..n.saturating_sub(2)]
            .iter()
            .filter(|ph| matches!(ph, Phase::JumpTo { .. }))
            .count();
        prop_assert!(atoms_before <= 1);
        prop_assert!(matches!(s.phases[n - 1], Phase::StationaryForever));
    }

    #[test]
    fn rollouts_end_at_the_singular_point(x in 0.01f64..0.99, k in 0.01f64..2.5) {
        let p = portrait();
        prop_assume!(classify(p, x, k).is_open());
        let ro = rollout(p, x, k, &RolloutOptions::value_only(40.0)).unwrap();
        let end = ro.trajectory.final_state();
        let c = p.model.constants;
        prop_assert!((end.x - c.x_star).abs() < 1e-6 && (end.k - c.k_star).abs() < 1e-6);
        let arrival = ro.spans.last().unwrap().t0;
        prop_assert!(ro.trajectory.jumps.iter().filter(|j| j.t < arrival).count() <= 1);
        for j in &ro.trajectory.jumps {
            prop_assert!(j.k_plus > j.k_minus);
            if j.t >= arrival {
                prop_assert!((j.k_plus - c.k_star).abs() < 1e-9);
            }
        }
    }
}

#[test]
fn value_is_continuous_across_switching_curves() {
    let p = portrait();
    let sp = p.specials;
    let h = 1e-4;
    // across Σ̃ at a capital above K̃̃
    for k in [0.8, 1.2] {
        let a = value(p, sp.x_tilde - h, k, 40.0).unwrap();
        let b = value(p, sp.x_tilde + h, k, 40.0).unwrap();
        assert!((a - b).abs() <= 1e-3, "sigma_tilde at K = {k}: {a} vs {b}");
    }
    // across Σ₀
    for k in [0.2, 0.5] {
        let x = p.s0.eval(k).unwrap();
        let a = value(p, x - h, k, 40.0).unwrap();
        let b = value(p, x + h, k, 40.0).unwrap();
        assert!((a - b).abs() <= 1e-3, "sigma0 at K = {k}: {a} vs {b}");
    }
    // across Σₛ
    let x = 0.6;
    let k = p.hs.eval(x).unwrap();
    let a = value(p, x, k - h, 40.0).unwrap();
    let b = value(p, x, k + h, 40.0).unwrap();
    assert!((a - b).abs() <= 1e-3, "sigma_s: {a} vs {b}");
}

#[test]
fn value_decreases_with_free_capital() {
    // J is a cost: more capital at no charge can only help.
    let p = portrait();
    for &(x, k) in &[(0.8, 0.1), (0.2, 0.3), (0.5, 0.5)] {
        let a = value(p, x, k, 40.0).unwrap();
        let b = value(p, x, k + 0.05, 40.0).unwrap();
        assert!(b <= a + 1e-9, "({x}, {k}): {b} > {a}");
    }
}
