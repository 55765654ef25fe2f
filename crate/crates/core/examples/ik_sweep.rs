//! Inverse kinematics along Tr8 under the initial geometry: actuator
//! lengths per via point and the worst stroke margin of each actuator.

use pkm::kinematics::inverse_kinematics_active;
use pkm::trajectory::{build, tr8};
use pkm::{PhysicalParams, PlatformGeometry};

fn main() -> pkm::Result<()> {
    let g = PlatformGeometry::initial();
    let phys = PhysicalParams::default();
    let series = build(&tr8())?;
    let mut worst = [f64::INFINITY; 4];
    println!(
        "{:>6} {:>8} {:>8} {:>8} {:>8}",
        "t", "q13", "q23", "q33", "q42"
    );
    for (k, vp) in series.points.iter().enumerate() {
        let l = inverse_kinematics_active(&g, &vp.pose)?;
        for i in 0..4 {
            worst[i] = worst[i].min((l[i] - phys.l_min).min(phys.l_max - l[i]));
        }
        if k % 6 == 0 {
            println!(
                "{:>6.2} {:>8.4} {:>8.4} {:>8.4} {:>8.4}",
                vp.t, l[0], l[1], l[2], l[3]
            );
        }
    }
    println!("stroke range [{}, {}] m", phys.l_min, phys.l_max);
    for (i, m) in worst.iter().enumerate() {
        println!("actuator {}: worst margin {:+.4} m", i + 1, m);
    }
    Ok(())
}
