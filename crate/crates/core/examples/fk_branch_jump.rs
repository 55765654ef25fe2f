//! Forward kinematics tracked along Tr8, each solve seeded with the
//! previous solution. Away from the singularity the tracked pose matches
//! the commanded one; across it Newton may stall or land on another branch.

use pkm::kinematics::{forward_kinematics, inverse_kinematics_active, FkOptions};
use pkm::trajectory::{build, tr8};
use pkm::PlatformGeometry;

fn main() -> pkm::Result<()> {
    let g = PlatformGeometry::initial();
    let series = build(&tr8())?;
    let mut seed = series.points[0].pose;
    for vp in &series.points {
        let lengths = inverse_kinematics_active(&g, &vp.pose)?;
        match forward_kinematics(&g, &lengths, &seed, &FkOptions::default()) {
            Ok(sol) => {
                let gap = (sol.pose.to_vector() - vp.pose.to_vector()).amax();
                let note = if gap > 1e-6 { "  other branch" } else { "" };
                println!(
                    "t {:>5.2}: {} iterations, pose gap {gap:.2e}{note}",
                    vp.t, sol.iterations
                );
                seed = sol.pose;
            }
            Err(e) => {
                println!("t {:>5.2}: {e}; reseeding from the commanded pose", vp.t);
                seed = vp.pose;
            }
        }
    }
    Ok(())
}
