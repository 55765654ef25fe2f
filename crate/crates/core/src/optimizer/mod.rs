//! Geometry reconfiguration.
//!
//! Stage one searches all seven geometric parameters per trajectory. The
//! mobile-platform triple is then frozen at the median of the stage-one
//! results, and stage two searches only the four fixed-platform parameters.
//! Both stages minimize the sum of squared actuator forces over a coarse set
//! of via points subject to singularity, stroke and inclination constraints
//! on the full discretization.

pub mod qp;
pub mod sqp;

use std::f64::consts::PI;

use nalgebra::{DVector, Vector4};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::{
    forward_jacobian, full_coordinates, inverse_kinematics_active, platform_normal, sign_changes,
};
use crate::model::{limb_axes, PhysicalParams, PlatformGeometry, LIMBS};
use crate::statics::inverse_statics;
use crate::trajectory::{resample, ViaPoint, ViaPointSeries};

pub use sqp::{IterateRecord, SqpOptions, Status, SENTINEL};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Stage {
    Seven,
    Four,
}

impl Stage {
    pub fn dimension(self) -> usize {
        match self {
            Stage::Seven => 7,
            Stage::Four => 4,
        }
    }

    pub fn variable_names(self) -> &'static [&'static str] {
        match self {
            Stage::Seven => &["R", "Rm", "ds", "betaFD", "betaFI", "betaMD", "betaMI"],
            Stage::Four => &["R", "ds", "betaFD", "betaFI"],
        }
    }

    /// Box bounds in SI units (m, rad).
    pub fn bounds(self) -> (Vec<f64>, Vec<f64>) {
        match self {
            Stage::Seven => (
                vec![0.20, 0.15, -0.15, 0.10, 0.10, 0.10, 0.10],
                vec![0.50, 0.30, 0.15, PI, PI, PI, PI],
            ),
            Stage::Four => (vec![0.20, -0.15, 0.10, 0.10], vec![0.50, 0.15, PI, PI]),
        }
    }
}

/// Mobile-platform parameters held fixed in stage two.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "TripleDoc", into = "TripleDoc")]
pub struct MobileTriple {
    pub rm: f64,
    pub beta_md: f64,
    pub beta_mi: f64,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct TripleDoc {
    #[serde(rename = "Rm")]
    rm: f64,
    #[serde(rename = "betaMD")]
    beta_md: f64,
    #[serde(rename = "betaMI")]
    beta_mi: f64,
}

impl From<TripleDoc> for MobileTriple {
    fn from(d: TripleDoc) -> Self {
        Self {
            rm: d.rm,
            beta_md: d.beta_md.to_radians(),
            beta_mi: d.beta_mi.to_radians(),
        }
    }
}

impl From<MobileTriple> for TripleDoc {
    fn from(t: MobileTriple) -> Self {
        use crate::report::round_sig;
        Self {
            rm: t.rm,
            beta_md: round_sig(t.beta_md.to_degrees()),
            beta_mi: round_sig(t.beta_mi.to_degrees()),
        }
    }
}

impl MobileTriple {
    pub fn of(geom: &PlatformGeometry) -> Self {
        Self {
            rm: geom.rm,
            beta_md: geom.beta_md,
            beta_mi: geom.beta_mi,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DesignVector {
    pub stage: Stage,
    /// Ordered as [`Stage::variable_names`], SI units.
    pub values: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub frozen: Option<MobileTriple>,
}

impl DesignVector {
    pub fn seven(geom: &PlatformGeometry) -> Self {
        Self {
            stage: Stage::Seven,
            values: geom.to_array().to_vec(),
            frozen: None,
        }
    }

    pub fn four(geom: &PlatformGeometry, frozen: MobileTriple) -> Self {
        Self {
            stage: Stage::Four,
            values: vec![geom.r, geom.ds, geom.beta_fd, geom.beta_fi],
            frozen: Some(frozen),
        }
    }

    fn from_values(stage: Stage, values: &[f64], frozen: Option<MobileTriple>) -> Self {
        Self {
            stage,
            values: values.to_vec(),
            frozen,
        }
    }

    pub fn geometry(&self) -> PlatformGeometry {
        let v = &self.values;
        match (self.stage, self.frozen) {
            (Stage::Seven, _) => {
                PlatformGeometry::from_array([v[0], v[1], v[2], v[3], v[4], v[5], v[6]])
            }
            (Stage::Four, Some(t)) => {
                PlatformGeometry::from_array([v[0], t.rm, v[1], v[2], v[3], t.beta_md, t.beta_mi])
            }
            (Stage::Four, None) => panic!("four-variable design without a frozen mobile triple"),
        }
    }

    pub fn within_bounds(&self) -> bool {
        let (lo, hi) = self.stage.bounds();
        self.values
            .iter()
            .zip(lo.iter().zip(&hi))
            .all(|(v, (l, h))| v >= l && v <= h)
    }
}

/// Which via point defines the reference determinant, and the sign applied
/// to the whole determinant series before the reference is taken.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SingularityFrame {
    pub index: usize,
    pub sign: f64,
}

impl SingularityFrame {
    /// The series is flipped when its largest-magnitude entry is negative,
    /// so an all-negative series is treated like an all-positive one. The
    /// reference is the maximum of the (possibly flipped) series.
    pub fn of(dets: &[f64]) -> Self {
        let largest = dets
            .iter()
            .copied()
            .fold(0.0f64, |m, d| if d.abs() > m.abs() { d } else { m });
        let sign = if largest < 0.0 { -1.0 } else { 1.0 };
        let mut index = 0;
        for (k, d) in dets.iter().enumerate() {
            if sign * d > sign * dets[index] {
                index = k;
            }
        }
        Self { index, sign }
    }

    pub fn reference(&self, dets: &[f64]) -> f64 {
        self.sign * dets[self.index]
    }
}

/// `|det_ref − det_i| < |det_ref|`.
pub fn difference_form_holds(det_ref: f64, det_i: f64) -> bool {
    (det_ref - det_i).abs() < det_ref.abs()
}

/// `2·det_ref·det_i − det_i² > 0`.
pub fn product_form_holds(det_ref: f64, det_i: f64) -> bool {
    2.0 * det_ref * det_i - det_i * det_i > 0.0
}

/// `2·det_ref·det_i − det_i²` for every via point, in the given frame.
pub fn singularity_margins(dets: &[f64], frame: &SingularityFrame) -> Vec<f64> {
    let r = frame.reference(dets);
    dets.iter()
        .map(|d| frame.sign * d)
        .map(|d| 2.0 * r * d - d * d)
        .collect()
}

pub fn singularity_constraints(
    geom: &PlatformGeometry,
    points: &[ViaPoint],
) -> Result<(Vec<f64>, SingularityFrame)> {
    let dets = determinants(geom, points)?;
    let frame = SingularityFrame::of(&dets);
    Ok((singularity_margins(&dets, &frame), frame))
}

fn determinants(geom: &PlatformGeometry, points: &[ViaPoint]) -> Result<Vec<f64>> {
    points
        .iter()
        .enumerate()
        .map(|(k, vp)| {
            forward_jacobian(geom, &vp.pose)
                .map(|(_, d)| d)
                .map_err(|e| match e {
                    Error::UnreachablePose { .. } => Error::UnreachablePose { index: Some(k) },
                    other => other,
                })
        })
        .collect()
}

/// Per via point: `q − l_min` for the four actuators, then `l_max − q`.
pub fn stroke_constraints(
    geom: &PlatformGeometry,
    points: &[ViaPoint],
    phys: &PhysicalParams,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(2 * LIMBS * points.len());
    for (k, vp) in points.iter().enumerate() {
        let lengths = inverse_kinematics_active(geom, &vp.pose)
            .map_err(|_| Error::UnreachablePose { index: Some(k) })?;
        out.extend(lengths.iter().map(|l| l - phys.l_min));
        out.extend(lengths.iter().map(|l| phys.l_max - l));
    }
    Ok(out)
}

/// Angle between a limb axis and the platform normal, folded into [0, π/2].
pub fn limb_inclination(axis: &nalgebra::Vector3<f64>, normal: &nalgebra::Vector3<f64>) -> f64 {
    axis.dot(normal).abs().clamp(0.0, 1.0).acos()
}

/// Per via point: `alpha_max − α_j` for the four limbs.
pub fn angle_constraints(
    geom: &PlatformGeometry,
    points: &[ViaPoint],
    alpha_max: f64,
) -> Result<Vec<f64>> {
    let mut out = Vec::with_capacity(LIMBS * points.len());
    for vp in points {
        let n = platform_normal(&vp.pose);
        out.extend(
            limb_axes(geom, &vp.pose)?
                .iter()
                .map(|u| alpha_max - limb_inclination(u, &n)),
        );
    }
    Ok(out)
}

pub fn sum_of_squares(forces: &[Vector4<f64>]) -> f64 {
    forces.iter().map(|f| f.norm_squared()).sum()
}

/// Sum of squared actuator forces over the via points.
pub fn objective(
    geom: &PlatformGeometry,
    points: &[ViaPoint],
    phys: &PhysicalParams,
) -> Result<f64> {
    let forces = points
        .iter()
        .map(|vp| {
            let q = full_coordinates(geom, &vp.pose)?;
            let (phi_x, _) = forward_jacobian(geom, &vp.pose)?;
            Ok(inverse_statics(geom, phys, &q, &(phi_x * vp.rates), &vp.wrench)?.forces)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(sum_of_squares(&forces))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConstraintReport {
    pub reachable: bool,
    pub det_phi_x: Vec<f64>,
    pub frame: Option<SingularityFrame>,
    pub singularity_margins: Vec<f64>,
    pub stroke_margins: Vec<f64>,
    pub angle_margins: Vec<f64>,
    pub feasible: bool,
}

fn minimum(v: &[f64]) -> f64 {
    v.iter().copied().fold(f64::INFINITY, f64::min)
}

impl ConstraintReport {
    pub fn min_singularity_margin(&self) -> f64 {
        minimum(&self.singularity_margins)
    }

    pub fn min_stroke_margin(&self) -> f64 {
        minimum(&self.stroke_margins)
    }

    pub fn min_angle_margin(&self) -> f64 {
        minimum(&self.angle_margins)
    }

    pub fn det_sign_changes(&self) -> usize {
        sign_changes(&self.det_phi_x).len()
    }

    /// Largest violation in units normalized like the solver sees them.
    pub fn normalized_violation(&self, phys: &PhysicalParams) -> f64 {
        if !self.reachable {
            return f64::INFINITY;
        }
        let r = self.frame.map_or(1.0, |f| {
            f.reference(&self.det_phi_x).powi(2).max(f64::MIN_POSITIVE)
        });
        let s = (-self.min_singularity_margin() / r).max(0.0);
        let l = (-self.min_stroke_margin() / (phys.l_max - phys.l_min)).max(0.0);
        let a = (-self.min_angle_margin() / phys.alpha_max).max(0.0);
        s.max(l).max(a)
    }
}

/// Every constraint family recomputed from scratch.
pub fn constraint_report(
    geom: &PlatformGeometry,
    points: &[ViaPoint],
    phys: &PhysicalParams,
) -> ConstraintReport {
    let parts = (|| {
        let (sing, frame) = singularity_constraints(geom, points)?;
        let dets = determinants(geom, points)?;
        Ok::<_, Error>((
            dets,
            frame,
            sing,
            stroke_constraints(geom, points, phys)?,
            angle_constraints(geom, points, phys.alpha_max)?,
        ))
    })();
    match parts {
        Ok((det_phi_x, frame, singularity_margins, stroke_margins, angle_margins)) => {
            let feasible = [&singularity_margins, &stroke_margins, &angle_margins]
                .iter()
                .all(|v| v.iter().all(|m| *m > 0.0));
            ConstraintReport {
                reachable: true,
                det_phi_x,
                frame: Some(frame),
                singularity_margins,
                stroke_margins,
                angle_margins,
                feasible,
            }
        }
        Err(_) => ConstraintReport {
            reachable: false,
            det_phi_x: Vec::new(),
            frame: None,
            singularity_margins: Vec::new(),
            stroke_margins: Vec::new(),
            angle_margins: Vec::new(),
            feasible: false,
        },
    }
}

/// The nonlinear program handed to the SQP solver.
pub struct ReconfigurationProblem<'a> {
    pub stage: Stage,
    pub frozen: Option<MobileTriple>,
    /// Constraint via points.
    pub points: &'a [ViaPoint],
    /// Objective via points.
    pub objective_points: &'a [ViaPoint],
    pub phys: &'a PhysicalParams,
}

impl ReconfigurationProblem<'_> {
    pub fn design(&self, x: &DVector<f64>) -> DesignVector {
        DesignVector::from_values(self.stage, x.as_slice(), self.frozen)
    }
}

impl sqp::Problem for ReconfigurationProblem<'_> {
    type Context = SingularityFrame;

    fn lower(&self) -> DVector<f64> {
        DVector::from_vec(self.stage.bounds().0)
    }

    fn upper(&self) -> DVector<f64> {
        DVector::from_vec(self.stage.bounds().1)
    }

    fn constraint_count(&self) -> usize {
        (1 + 3 * LIMBS) * self.points.len()
    }

    /// Constraints are normalized: singularity margins by `det_ref²`, stroke
    /// margins by the stroke range, angle margins by `alpha_max`.
    fn evaluate(
        &self,
        x: &DVector<f64>,
        context: Option<&SingularityFrame>,
    ) -> Option<sqp::Evaluation<SingularityFrame>> {
        let geom = self.design(x).geometry();
        let dets = determinants(&geom, self.points).ok()?;
        let frame = context
            .copied()
            .unwrap_or_else(|| SingularityFrame::of(&dets));
        let reference = frame.reference(&dets);
        let norm = (reference * reference).max(f64::MIN_POSITIVE);
        let stroke = stroke_constraints(&geom, self.points, self.phys).ok()?;
        let angle = angle_constraints(&geom, self.points, self.phys.alpha_max).ok()?;
        let range = self.phys.l_max - self.phys.l_min;

        let constraints = singularity_margins(&dets, &frame)
            .into_iter()
            .map(|v| v / norm)
            .chain(stroke.into_iter().map(|v| v / range))
            .chain(angle.into_iter().map(|v| v / self.phys.alpha_max));
        let objective = match objective(&geom, self.objective_points, self.phys) {
            Ok(f) if f.is_finite() => f.min(SENTINEL),
            _ => SENTINEL,
        };
        Some(sqp::Evaluation {
            objective,
            constraints: DVector::from_iterator(self.constraint_count(), constraints),
            context: frame,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OptimizerOptions {
    pub sqp: SqpOptions,
    /// Number of starts: the initial geometry plus space-filling samples.
    pub multistart: usize,
    pub seed: u64,
    /// Via points used for the objective.
    pub objective_points: usize,
}

impl Default for OptimizerOptions {
    fn default() -> Self {
        Self {
            sqp: SqpOptions::default(),
            multistart: 5,
            seed: 0,
            objective_points: 11,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StartSummary {
    pub start: DesignVector,
    pub status: Status,
    pub message: String,
    pub objective: f64,
    pub feasible: bool,
    pub iterations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizationResult {
    pub trajectory: String,
    pub design: DesignVector,
    pub geometry: PlatformGeometry,
    /// Sum of squared forces over the objective via points (N²).
    pub objective: f64,
    pub report: ConstraintReport,
    pub status: Status,
    pub message: String,
    /// Index into `starts` of the run that produced this result.
    pub chosen_start: usize,
    pub starts: Vec<StartSummary>,
    pub iterations: Vec<IterateRecord>,
}

impl OptimizationResult {
    /// Feasible by an independent re-evaluation of every constraint. A run
    /// that stalled at a feasible point counts; see [`Self::is_converged`].
    pub fn is_feasible(&self) -> bool {
        self.report.feasible
    }

    pub fn is_converged(&self) -> bool {
        self.status == Status::Converged
    }
}

/// Latin-hypercube samples of the unit box.
fn latin_hypercube(rng: &mut ChaCha8Rng, samples: usize, dim: usize) -> Vec<Vec<f64>> {
    let mut out = vec![vec![0.0; dim]; samples];
    for j in 0..dim {
        let mut strata: Vec<usize> = (0..samples).collect();
        strata.shuffle(rng);
        for (i, s) in strata.into_iter().enumerate() {
            out[i][j] = (s as f64 + rng.random::<f64>()) / samples as f64;
        }
    }
    out
}

fn start_points(stage: Stage, initial: &[f64], opts: &OptimizerOptions) -> Vec<Vec<f64>> {
    let (lo, hi) = stage.bounds();
    let mut starts = vec![initial
        .iter()
        .zip(lo.iter().zip(&hi))
        .map(|(v, (l, h))| v.clamp(*l, *h))
        .collect()];
    if opts.multistart > 1 {
        let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
        for unit in latin_hypercube(&mut rng, opts.multistart - 1, stage.dimension()) {
            starts.push(
                unit.iter()
                    .zip(lo.iter().zip(&hi))
                    .map(|(u, (l, h))| l + u * (h - l))
                    .collect(),
            );
        }
    }
    starts
}

fn objective_series(series: &ViaPointSeries, p: usize) -> Result<Vec<ViaPoint>> {
    if series.len() <= 1 || p < 2 {
        return Ok(series.points.clone());
    }
    Ok(resample(series, p)?.points)
}

fn lexicographic(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    a.iter()
        .zip(b)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

fn optimize(
    trajectory: &str,
    stage: Stage,
    frozen: Option<MobileTriple>,
    series: &ViaPointSeries,
    phys: &PhysicalParams,
    opts: &OptimizerOptions,
) -> Result<OptimizationResult> {
    if series.is_empty() {
        return Err(Error::Invalid(format!(
            "trajectory {trajectory} has no via points"
        )));
    }
    let objective_points = objective_series(series, opts.objective_points)?;
    let problem = ReconfigurationProblem {
        stage,
        frozen,
        points: &series.points,
        objective_points: &objective_points,
        phys,
    };
    let initial = match stage {
        Stage::Seven => DesignVector::seven(&PlatformGeometry::initial()),
        Stage::Four => DesignVector::four(
            &PlatformGeometry::initial(),
            frozen.expect("stage four needs a frozen triple"),
        ),
    };

    let runs: Vec<_> = start_points(stage, &initial.values, opts)
        .into_par_iter()
        .map(|x0| {
            let run = sqp::minimize(&problem, &DVector::from_vec(x0.clone()), &opts.sqp);
            let design = problem.design(&run.x);
            let geometry = design.geometry();
            let report = constraint_report(&geometry, &series.points, phys);
            let objective = objective(&geometry, &objective_points, phys).unwrap_or(f64::INFINITY);
            (
                DesignVector::from_values(stage, &x0, frozen),
                run,
                design,
                geometry,
                report,
                objective,
            )
        })
        .collect();

    let feasible =
        |_: &sqp::SqpResult<SingularityFrame>, report: &ConstraintReport| report.feasible;
    let best = (0..runs.len())
        .min_by(|&a, &b| {
            let (ra, rb) = (&runs[a], &runs[b]);
            let (fa, fb) = (feasible(&ra.1, &ra.4), feasible(&rb.1, &rb.4));
            fb.cmp(&fa)
                .then_with(|| {
                    if fa {
                        std::cmp::Ordering::Equal
                    } else {
                        ra.4.normalized_violation(phys)
                            .total_cmp(&rb.4.normalized_violation(phys))
                    }
                })
                .then_with(|| ra.5.total_cmp(&rb.5))
                .then_with(|| lexicographic(&ra.2.values, &rb.2.values))
        })
        .expect("at least one start");

    let starts = runs
        .iter()
        .map(|(start, run, _, _, report, objective)| StartSummary {
            start: start.clone(),
            status: run.status,
            message: run.message.clone(),
            objective: *objective,
            feasible: feasible(run, report),
            iterations: run.iterations.len() - 1,
        })
        .collect();
    let (_, run, design, geometry, report, objective) = runs.into_iter().nth(best).unwrap();
    Ok(OptimizationResult {
        trajectory: trajectory.to_string(),
        design,
        geometry,
        objective,
        report,
        status: run.status,
        message: run.message,
        chosen_start: best,
        starts,
        iterations: run.iterations,
    })
}

/// Seven-variable stage.
pub fn optimize_stage1(
    trajectory: &str,
    series: &ViaPointSeries,
    phys: &PhysicalParams,
    opts: &OptimizerOptions,
) -> Result<OptimizationResult> {
    optimize(trajectory, Stage::Seven, None, series, phys, opts)
}

/// Four-variable stage with the mobile triple held at `frozen`.
pub fn optimize_stage2(
    trajectory: &str,
    series: &ViaPointSeries,
    phys: &PhysicalParams,
    frozen: MobileTriple,
    opts: &OptimizerOptions,
) -> Result<OptimizationResult> {
    optimize(trajectory, Stage::Four, Some(frozen), series, phys, opts)
}

fn lower_median(mut v: Vec<f64>) -> f64 {
    v.sort_by(f64::total_cmp);
    v[(v.len() - 1) / 2]
}

/// Componentwise lower median.
pub fn median_triple(triples: &[MobileTriple]) -> Option<MobileTriple> {
    if triples.is_empty() {
        return None;
    }
    Some(MobileTriple {
        rm: lower_median(triples.iter().map(|t| t.rm).collect()),
        beta_md: lower_median(triples.iter().map(|t| t.beta_md).collect()),
        beta_mi: lower_median(triples.iter().map(|t| t.beta_mi).collect()),
    })
}

/// Angles snapped to the nearest multiple of 5°.
pub fn round_triple(t: MobileTriple) -> MobileTriple {
    let snap = |a: f64| ((a.to_degrees() / 5.0).round() * 5.0).to_radians();
    MobileTriple {
        rm: t.rm,
        beta_md: snap(t.beta_md),
        beta_mi: snap(t.beta_mi),
    }
}

/// Frozen triple from stage-one results: the feasible ones when any exist,
/// otherwise all of them.
pub fn median_fix(stage1: &[OptimizationResult]) -> Option<MobileTriple> {
    let feasible: Vec<_> = stage1.iter().filter(|r| r.is_feasible()).collect();
    let pool: Vec<_> = if feasible.is_empty() {
        stage1.iter().collect()
    } else {
        feasible
    };
    median_triple(
        &pool
            .iter()
            .map(|r| MobileTriple::of(&r.geometry))
            .collect::<Vec<_>>(),
    )
    .map(round_triple)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutcome {
    pub trajectory: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub result: Option<OptimizationResult>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl RunOutcome {
    fn from(trajectory: &str, r: Result<OptimizationResult>) -> Self {
        match r {
            Ok(result) => Self {
                trajectory: trajectory.into(),
                result: Some(result),
                error: None,
            },
            Err(e) => Self {
                trajectory: trajectory.into(),
                result: None,
                error: Some(e.to_string()),
            },
        }
    }

    pub fn is_feasible(&self) -> bool {
        self.result
            .as_ref()
            .is_some_and(OptimizationResult::is_feasible)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PipelineResult {
    pub stage1: Vec<RunOutcome>,
    pub frozen: Option<MobileTriple>,
    pub stage2: Vec<RunOutcome>,
}

/// Stage one on every trajectory, median fix, then stage two on every
/// trajectory with the same frozen triple.
pub fn run_pipeline(
    trajectories: &[(String, ViaPointSeries)],
    phys: &PhysicalParams,
    opts: &OptimizerOptions,
) -> Result<PipelineResult> {
    if trajectories.is_empty() {
        return Err(Error::Invalid(
            "pipeline needs at least one trajectory".into(),
        ));
    }
    let stage1: Vec<RunOutcome> = trajectories
        .par_iter()
        .map(|(id, series)| RunOutcome::from(id, optimize_stage1(id, series, phys, opts)))
        .collect();
    let results: Vec<OptimizationResult> = stage1.iter().filter_map(|o| o.result.clone()).collect();
    let frozen = median_fix(&results);
    let stage2 = match frozen {
        Some(t) => trajectories
            .par_iter()
            .map(|(id, series)| RunOutcome::from(id, optimize_stage2(id, series, phys, t, opts)))
            .collect(),
        None => trajectories
            .iter()
            .map(|(id, _)| RunOutcome {
                trajectory: id.clone(),
                result: None,
                error: Some("no stage-one result".into()),
            })
            .collect(),
    };
    Ok(PipelineResult {
        stage1,
        frozen,
        stage2,
    })
}
