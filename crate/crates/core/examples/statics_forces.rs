//! Actuator forces and power along Tr8 under the initial geometry. Forces
//! blow up next to the forward singularity; those points are flagged.

use pkm::statics::forces_along_path;
use pkm::trajectory::{build, tr8};
use pkm::{PhysicalParams, PlatformGeometry};

fn main() -> pkm::Result<()> {
    let g = PlatformGeometry::initial();
    let phys = PhysicalParams::default();
    let series = build(&tr8())?;
    println!(
        "{:>6} {:>10} {:>10} {:>10} {:>10} {:>9}  flag",
        "t", "F1", "F2", "F3", "F4", "det"
    );
    for p in forces_along_path(&g, &phys, &series.points) {
        let flag = if p.flagged { "*" } else { "" };
        match &p.solution {
            Ok(s) => println!(
                "{:>6.2} {:>10.1} {:>10.1} {:>10.1} {:>10.1} {:>9.2e}  {flag}",
                p.t, s.forces[0], s.forces[1], s.forces[2], s.forces[3], p.det_phi_x
            ),
            Err(e) => println!("{:>6.2} {e}", p.t),
        }
    }
    Ok(())
}
