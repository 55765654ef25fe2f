//! Search small parameter grids for the unpublished test trajectories.
//!
//! A candidate is accepted when, under the initial geometry and default
//! physical parameters, it shows exactly its class's difficulties (forward
//! singularity, stroke overrun, or both) and the reconfiguration problem
//! still admits feasible designs in both stages (the second stage with the
//! mobile triple 0.23 m / 90° / 100°). Prints the first accepted candidate
//! per class, then re-checks the shipped catalog.
//!
//! Run with `cargo run --release --example calibrate_catalog`.

use pkm::kinematics::{det_along_path, inverse_kinematics_active, sign_changes};
use pkm::optimizer::{optimize_stage1, optimize_stage2, MobileTriple, OptimizerOptions};
use pkm::trajectory::{
    build, catalog, default_wrench, OrientationMode, TrajectoryKind, TrajectorySpec,
};
use pkm::{PhysicalParams, PlatformGeometry};

#[derive(Debug, Clone, Copy, PartialEq)]
struct Tags {
    singular: bool,
    /// Actuators whose length leaves [l_min, l_max] somewhere on the path.
    stroke: [bool; 4],
}

impl Tags {
    fn stroke_any(&self) -> bool {
        self.stroke.iter().any(|s| *s)
    }
}

fn tags(spec: &TrajectorySpec, phys: &PhysicalParams) -> Option<Tags> {
    let g = PlatformGeometry::initial();
    let series = build(spec).ok()?;
    let dets = det_along_path(&g, &series.poses()).ok()?;
    let max = dets.iter().fold(0.0f64, |m, d| m.max(d.abs()));
    let min = dets.iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
    let singular = !sign_changes(&dets).is_empty() || min < 1e-6 * max;
    let mut stroke = [false; 4];
    for p in series.poses() {
        let l = inverse_kinematics_active(&g, &p).ok()?;
        for i in 0..4 {
            stroke[i] |= l[i] < phys.l_min || l[i] > phys.l_max;
        }
    }
    Some(Tags { singular, stroke })
}

fn reconfigurable(spec: &TrajectorySpec, phys: &PhysicalParams, opts: &OptimizerOptions) -> bool {
    let Ok(series) = build(spec) else {
        return false;
    };
    let frozen = MobileTriple {
        rm: 0.23,
        beta_md: 90f64.to_radians(),
        beta_mi: 100f64.to_radians(),
    };
    optimize_stage1("candidate", &series, phys, opts).is_ok_and(|r| r.is_feasible())
        && optimize_stage2("candidate", &series, phys, frozen, opts).is_ok_and(|r| r.is_feasible())
}

#[allow(clippy::too_many_arguments)]
fn line(
    kind: TrajectoryKind,
    orientation: OrientationMode,
    x0: f64,
    z0: f64,
    v0: f64,
    incline: f64,
    angles: [f64; 4],
    duration: f64,
) -> TrajectorySpec {
    TrajectorySpec {
        kind,
        orientation,
        x0,
        z0,
        v0,
        a: 0.0,
        b: 0.0,
        incline: incline.to_radians(),
        theta0: angles[0].to_radians(),
        psi0: angles[1].to_radians(),
        omega_theta: angles[2],
        omega_psi: angles[3],
        duration,
        dt: 0.30,
        wrench: default_wrench(),
    }
}

const TILTS: [f64; 7] = [0.0, 10.0, -10.0, 20.0, -20.0, 30.0, -30.0];
const RATES: [f64; 5] = [0.0, 0.02, -0.02, 0.05, -0.05];

fn orientations(variable: bool) -> Vec<[f64; 4]> {
    let mut out = Vec::new();
    for t in TILTS {
        for p in TILTS {
            if variable {
                for wt in RATES {
                    for wp in RATES {
                        if wt != 0.0 || wp != 0.0 {
                            out.push([t, p, wt, wp]);
                        }
                    }
                }
            } else {
                out.push([t, p, 0.0, 0.0]);
            }
        }
    }
    out
}

fn candidates(id: &str) -> Vec<TrajectorySpec> {
    use OrientationMode::{Constant, Variable};
    use TrajectoryKind::{Ellipse, HorizontalLine, InclinedLine, VerticalLine};
    let mut out = Vec::new();
    match id {
        "Tr1" => {
            for o in orientations(false) {
                out.push(line(
                    HorizontalLine,
                    Constant,
                    -0.048,
                    0.631,
                    0.02,
                    0.0,
                    o,
                    10.0,
                ));
            }
        }
        "Tr2" => {
            for z0 in [0.631, 0.55, 0.7] {
                for o in orientations(true) {
                    out.push(line(
                        HorizontalLine,
                        Variable,
                        -0.048,
                        z0,
                        0.02,
                        0.0,
                        o,
                        10.0,
                    ));
                }
            }
        }
        "Tr3" | "Tr4" => {
            let variable = id == "Tr4";
            for x0 in [0.0, 0.05, -0.05, 0.1, -0.1] {
                for (z0, v0) in [
                    (0.45, 0.02),
                    (0.5, 0.02),
                    (0.55, 0.02),
                    (0.4, 0.02),
                    (0.45, 0.03),
                ] {
                    for o in orientations(variable) {
                        out.push(line(
                            VerticalLine,
                            if variable { Variable } else { Constant },
                            x0,
                            z0,
                            v0,
                            0.0,
                            o,
                            10.0,
                        ));
                    }
                }
            }
        }
        "Tr5" | "Tr6" => {
            let variable = id == "Tr6";
            for incline in [45.0, 30.0, 60.0, -45.0, 135.0] {
                for (x0, z0) in [
                    (-0.1, 0.5),
                    (-0.15, 0.45),
                    (0.0, 0.5),
                    (-0.1, 0.55),
                    (0.1, 0.5),
                ] {
                    for o in orientations(variable) {
                        out.push(line(
                            InclinedLine,
                            if variable { Variable } else { Constant },
                            x0,
                            z0,
                            0.02,
                            incline,
                            o,
                            10.0,
                        ));
                    }
                }
            }
        }
        "Tr7" => {
            for z0 in [0.25, 0.2, 0.3, 0.35] {
                for a in [0.4, 0.45, 0.5] {
                    for o in orientations(false) {
                        out.push(TrajectorySpec {
                            kind: Ellipse,
                            orientation: Constant,
                            x0: -0.15,
                            z0,
                            v0: 0.015,
                            a,
                            b: 0.2,
                            incline: 0.0,
                            theta0: o[0].to_radians(),
                            psi0: o[1].to_radians(),
                            omega_theta: 0.0,
                            omega_psi: 0.0,
                            duration: 20.0,
                            dt: 0.30,
                            wrench: default_wrench(),
                        });
                    }
                }
            }
        }
        _ => {}
    }
    out
}

/// Required tag pattern: (singular, stroke, required overrun actuator).
fn wanted(id: &str) -> (bool, bool, Option<usize>) {
    match id {
        "Tr1" | "Tr2" | "Tr4" => (true, false, None),
        "Tr3" => (false, true, None),
        "Tr5" => (false, true, Some(0)),
        _ => (true, true, None),
    }
}

fn matches(id: &str, t: &Tags) -> bool {
    let (singular, stroke, actuator) = wanted(id);
    t.singular == singular && t.stroke_any() == stroke && actuator.is_none_or(|i| t.stroke[i])
}

fn main() {
    let phys = PhysicalParams::default();
    let opts = OptimizerOptions {
        multistart: 3,
        ..Default::default()
    };
    let search = std::env::args().any(|a| a == "--search");

    if search {
        for id in ["Tr1", "Tr2", "Tr3", "Tr4", "Tr5", "Tr6", "Tr7"] {
            let all = candidates(id);
            let tagged: Vec<_> = all
                .iter()
                .filter(|s| tags(s, &phys).is_some_and(|t| matches(id, &t)))
                .collect();
            print!(
                "{id}: {} candidates, {} with matching tags",
                all.len(),
                tagged.len()
            );
            match tagged.iter().find(|s| reconfigurable(s, &phys, &opts)) {
                Some(s) => println!(
                    "\n  accepted: x0 {} z0 {} v0 {} a {} incline {:.0} theta0 {:.0} psi0 {:.0} omega ({}, {}) duration {}",
                    s.x0,
                    s.z0,
                    s.v0,
                    s.a,
                    s.incline.to_degrees(),
                    s.theta0.to_degrees(),
                    s.psi0.to_degrees(),
                    s.omega_theta,
                    s.omega_psi,
                    s.duration
                ),
                None => println!("\n  no reconfigurable candidate"),
            }
        }
    }

    println!("shipped catalog under the initial geometry:");
    for (id, spec) in catalog() {
        let t = tags(&spec, &phys).expect("catalog trajectories are reachable");
        let (singular, stroke, _) = wanted(id);
        println!(
            "  {id}: singular {} (want {singular}), stroke overrun {:?} (want {stroke}), tags {}",
            t.singular,
            t.stroke,
            if matches(id, &t) { "match" } else { "MISMATCH" }
        );
    }
}
