//! Forward-Jacobian determinant along every catalog trajectory under the
//! initial geometry. Pass a file name to also write the Tr8 curve as SVG.

use pkm::kinematics::{det_along_path, sign_changes};
use pkm::report::{line_chart, Series};
use pkm::trajectory::{build, catalog};
use pkm::PlatformGeometry;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let g = PlatformGeometry::initial();
    for (id, spec) in catalog() {
        let series = build(&spec)?;
        let dets = det_along_path(&g, &series.poses())?;
        let max = dets.iter().fold(0.0f64, |m, d| m.max(d.abs()));
        let min = dets.iter().fold(f64::INFINITY, |m, d| m.min(d.abs()));
        let crossings: Vec<String> = sign_changes(&dets)
            .iter()
            .map(|&k| format!("{:.2}", series.points[k].t))
            .collect();
        println!(
            "{id}: min/max |det| {:.2e}, sign changes after t = [{}]",
            min / max,
            crossings.join(", ")
        );
        if id == "Tr8" {
            if let Some(path) = std::env::args().nth(1) {
                let pts = series
                    .points
                    .iter()
                    .zip(&dets)
                    .map(|(p, d)| (p.t, *d))
                    .collect();
                let svg = line_chart(
                    "Tr8 forward Jacobian",
                    "t (s)",
                    "det",
                    &[Series::new("det", pts)],
                );
                std::fs::write(&path, svg)?;
                println!("wrote {path}");
            }
        }
    }
    Ok(())
}
