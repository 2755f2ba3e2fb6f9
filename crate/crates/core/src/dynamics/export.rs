//! CSV / JSON serialization of trajectories. Floats use 17 significant
//! digits so values round-trip exactly.

use std::fmt::Write;

use super::{Sample, Trajectory};

pub const TRAJECTORY_HEADER: &str = "t,x,K,u,z,lambda,J_running";

/// 17 significant digits, `NaN` for missing values.
pub fn fmt_f64(v: f64) -> String {
    if v.is_nan() {
        "NaN".to_string()
    } else {
        format!("{v:.16e}")
    }
}

pub fn csv_row(values: &[f64]) -> String {
    values.iter().map(|v| fmt_f64(*v)).collect::<Vec<_>>().join(",")
}

pub fn samples_csv(samples: &[Sample]) -> String {
    let mut out = String::with_capacity(samples.len() * 180);
    out.push_str(TRAJECTORY_HEADER);
    out.push('\n');
    for s in samples {
        let _ = writeln!(out, "{}", csv_row(&[s.t, s.x, s.k, s.u, s.z, s.lambda, s.j_running]));
    }
    out
}

pub fn trajectory_csv(traj: &Trajectory, dt: f64) -> String {
    samples_csv(&traj.samples(dt))
}

pub fn jumps_json(traj: &Trajectory) -> String {
    serde_json::to_string_pretty(&traj.jumps).expect("jump records serialize")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::{integrate_state, ControlMode, ControlTrace, ImpulseMeasure, OdeOptions, State};
    use crate::model::Model;

    #[test]
    fn float_format_round_trips() {
        for v in [0.1, -0.14617236, 1e-300, 123456.789, std::f64::consts::PI] {
            assert_eq!(fmt_f64(v).parse::<f64>().unwrap(), v);
        }
        assert_eq!(fmt_f64(f64::NAN), "NaN");
    }

    #[test]
    fn csv_has_header_and_event_rows() {
        let m = Model::fix1();
        let mu = ImpulseMeasure::atom(0.333, 0.1).unwrap();
        let traj = integrate_state(
            &m,
            State::new(0.5, 0.5),
            &ControlTrace::constant(ControlMode::One, 1.0),
            &mu,
            1.0,
            &OdeOptions::default(),
        )
        .unwrap();
        let csv = trajectory_csv(&traj, 0.25);
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], TRAJECTORY_HEADER);
        // 0, 0.25, 0.333, 0.5, 0.75, 1
        assert_eq!(lines.len(), 7);
        assert!(lines.iter().any(|l| l.starts_with(&fmt_f64(0.333))));
        let jumps: serde_json::Value = serde_json::from_str(&jumps_json(&traj)).unwrap();
        assert_eq!(jumps[0]["t"], 0.333);
        assert!(jumps[0]["K_plus"].as_f64().unwrap() > jumps[0]["K_minus"].as_f64().unwrap());
    }
}
