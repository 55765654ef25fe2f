//! Single-trajectory pipeline on Tr8: seven-variable stage, its own mobile
//! triple rounded to 5°, then the four-variable stage.

use pkm::optimizer::{
    optimize_stage1, optimize_stage2, round_triple, MobileTriple, OptimizationResult,
    OptimizerOptions,
};
use pkm::trajectory::{build, tr8};
use pkm::PhysicalParams;

fn show(label: &str, r: &OptimizationResult) {
    let g = &r.geometry;
    println!(
        "{label}: status {:?} ({}), feasible {}, objective {:.4e} N², {} iterations, start {}",
        r.status,
        r.message,
        r.report.feasible,
        r.objective,
        r.iterations.len() - 1,
        r.chosen_start
    );
    println!(
        "  R {:.4} Rm {:.4} ds {:.4} betaFD {:.1} betaFI {:.1} betaMD {:.1} betaMI {:.1}",
        g.r,
        g.rm,
        g.ds,
        g.beta_fd.to_degrees(),
        g.beta_fi.to_degrees(),
        g.beta_md.to_degrees(),
        g.beta_mi.to_degrees()
    );
    println!(
        "  min margins: singularity {:.3e}, stroke {:.4} m, angle {:.2}°; det sign changes {}",
        r.report.min_singularity_margin(),
        r.report.min_stroke_margin(),
        r.report.min_angle_margin().to_degrees(),
        r.report.det_sign_changes()
    );
    for s in &r.starts {
        println!(
            "  start: {:?} feasible {} objective {:.4e} iterations {}",
            s.status, s.feasible, s.objective, s.iterations
        );
    }
}

fn main() -> pkm::Result<()> {
    let phys = PhysicalParams::default();
    let opts = OptimizerOptions::default();
    let series = build(&tr8())?;

    let t0 = std::time::Instant::now();
    let s1 = optimize_stage1("Tr8", &series, &phys, &opts)?;
    show("stage 1", &s1);
    let frozen = round_triple(MobileTriple::of(&s1.geometry));
    let s2 = optimize_stage2("Tr8", &series, &phys, frozen, &opts)?;
    show("stage 2", &s2);
    println!("elapsed {:.1} s", t0.elapsed().as_secs_f64());
    Ok(())
}
