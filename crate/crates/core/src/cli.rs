//! Batch front end behind the `pkm` binary.
//!
//! Every command reads one JSON config, computes all outputs in memory and
//! only then writes them, so a failing run leaves no partial files.
//!
//! Exit codes: 0 success, 1 some trajectory of an optimization batch failed,
//! 2 a pose along the path is unreachable, 64 usage or config error.

use std::ffi::OsString;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::kinematics::{
    constraint_jacobian, forward_jacobian, full_coordinates, inverse_kinematics_active,
};
use crate::kinematics::{secondary_determinant, split_jacobian};
use crate::model::{PhysicalParams, PlatformGeometry};
use crate::optimizer::{
    optimize_stage1, optimize_stage2, run_pipeline, MobileTriple, OptimizationResult,
    OptimizerOptions, PipelineResult, RunOutcome, Stage,
};
use crate::report::{fmt_num, line_chart, Series};
use crate::statics::forces_along_path;
use crate::trajectory::{
    build, catalog, catalog_entry, TrajectorySpec, ViaPointSeries, CATALOG_IDS,
};

pub const EXIT_OK: i32 = 0;
pub const EXIT_PARTIAL: i32 = 1;
pub const EXIT_INFEASIBLE: i32 = 2;
pub const EXIT_CONFIG: i32 = 64;

#[derive(Debug, Parser)]
#[command(
    name = "pkm",
    version,
    about = "3UPS/RPU manipulator kinematics, statics and geometry reconfiguration"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, clap::Args)]
pub struct Common {
    /// JSON run configuration.
    #[arg(long)]
    pub config: PathBuf,
    /// Catalog id (Tr1..Tr8); overrides the config.
    #[arg(long)]
    pub trajectory: Option<String>,
    /// Output directory; overrides the config (default `out`).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Multistart seed; overrides the config.
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Active limb lengths along a trajectory.
    Ik(Common),
    /// Forward-Jacobian determinant along a trajectory.
    Detmap(Common),
    /// Actuator forces and power along a trajectory.
    Forces(Common),
    /// Geometry reconfiguration.
    Optimize {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = StageArg::Pipeline)]
        stage: StageArg,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum StageArg {
    Seven,
    Four,
    Pipeline,
}

/// A catalog id or an inline trajectory.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(untagged)]
pub enum TrajectoryRef {
    Catalog(String),
    Inline(TrajectorySpec),
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    #[serde(default = "PlatformGeometry::initial")]
    pub geometry: PlatformGeometry,
    #[serde(default)]
    pub physical: PhysicalParams,
    /// Path for `ik`, `detmap` and `forces`; also the optimization set when
    /// `trajectories` is absent.
    #[serde(default)]
    pub trajectory: Option<TrajectoryRef>,
    /// Optimization set; the whole catalog when neither field is given.
    #[serde(default)]
    pub trajectories: Option<Vec<TrajectoryRef>>,
    #[serde(default)]
    pub optimizer: OptimizerOptions,
    /// Mobile triple held fixed by `--stage four`; defaults to the one of
    /// `geometry`.
    #[serde(default)]
    pub frozen: Option<MobileTriple>,
    #[serde(default)]
    pub output_dir: Option<PathBuf>,
    #[serde(default)]
    pub seed: Option<u64>,
}

#[derive(Debug)]
enum Failure {
    Config(String),
    Infeasible(String),
}

impl Failure {
    fn code(&self) -> i32 {
        match self {
            Failure::Config(_) => EXIT_CONFIG,
            Failure::Infeasible(_) => EXIT_INFEASIBLE,
        }
    }
}

impl std::fmt::Display for Failure {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Failure::Config(m) => write!(f, "config error: {m}"),
            Failure::Infeasible(m) => write!(f, "infeasible: {m}"),
        }
    }
}

/// Files produced by one command, written only after it succeeds.
struct Outputs {
    files: Vec<(String, Vec<u8>)>,
    code: i32,
}

pub fn load_config(path: &Path) -> std::result::Result<RunConfig, String> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| format!("cannot read {}: {e}", path.display()))?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> std::result::Result<RunConfig, String> {
    let de = &mut serde_json::Deserializer::from_str(text);
    let cfg: RunConfig = serde_path_to_error::deserialize(de).map_err(|e| {
        let path = e.path().to_string();
        if path == "." {
            e.inner().to_string()
        } else {
            format!("at `{path}`: {}", e.inner())
        }
    })?;
    cfg.geometry
        .validate()
        .map_err(|e| format!("at `geometry`: {e}"))?;
    cfg.physical
        .validate()
        .map_err(|e| format!("at `physical`: {e}"))?;
    Ok(cfg)
}

fn resolve(
    r: &TrajectoryRef,
    name: &str,
    field: &str,
) -> std::result::Result<(String, ViaPointSeries), Failure> {
    let (id, spec) = match r {
        TrajectoryRef::Catalog(id) => match catalog_entry(id) {
            Some(spec) => (id.clone(), spec),
            None => {
                return Err(Failure::Config(format!(
                    "at `{field}`: unknown trajectory `{id}` (expected one of {})",
                    CATALOG_IDS.join(", ")
                )))
            }
        },
        TrajectoryRef::Inline(spec) => (name.to_string(), *spec),
    };
    let series = build(&spec).map_err(|e| Failure::Config(format!("at `{field}`: {e}")))?;
    Ok((id, series))
}

fn single_trajectory(
    cfg: &RunConfig,
    common: &Common,
) -> std::result::Result<(String, ViaPointSeries), Failure> {
    match (&common.trajectory, &cfg.trajectory) {
        (Some(id), _) => resolve(
            &TrajectoryRef::Catalog(id.clone()),
            "custom",
            "--trajectory",
        ),
        (None, Some(r)) => resolve(r, "custom", "trajectory"),
        (None, None) => Err(Failure::Config(
            "no trajectory given (config `trajectory` or --trajectory)".into(),
        )),
    }
}

fn trajectory_set(
    cfg: &RunConfig,
    common: &Common,
) -> std::result::Result<Vec<(String, ViaPointSeries)>, Failure> {
    if common.trajectory.is_some() {
        return single_trajectory(cfg, common).map(|t| vec![t]);
    }
    match (&cfg.trajectories, &cfg.trajectory) {
        (Some(list), _) => {
            if list.is_empty() {
                return Err(Failure::Config("at `trajectories`: list is empty".into()));
            }
            list.iter()
                .enumerate()
                .map(|(k, r)| {
                    resolve(
                        r,
                        &format!("custom-{}", k + 1),
                        &format!("trajectories[{k}]"),
                    )
                })
                .collect()
        }
        (None, Some(r)) => resolve(r, "custom", "trajectory").map(|t| vec![t]),
        (None, None) => catalog()
            .into_iter()
            .map(|(id, spec)| {
                build(&spec)
                    .map(|s| (id.to_string(), s))
                    .map_err(|e| Failure::Config(e.to_string()))
            })
            .collect(),
    }
}

fn unreachable(e: &Error, series: &ViaPointSeries, k: usize) -> Failure {
    Failure::Infeasible(format!(
        "{e}; first unreachable via point {k} (t = {} s)",
        fmt_num(series.points[k].t)
    ))
}

fn csv_bytes(header: &[&str], rows: &[Vec<String>]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.write_record(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory flush")
}

fn pose_cells(series: &ViaPointSeries, k: usize) -> Vec<String> {
    let p = &series.points[k];
    vec![
        fmt_num(p.t),
        fmt_num(p.pose.xm),
        fmt_num(p.pose.zm),
        fmt_num(p.pose.theta.to_degrees()),
        fmt_num(p.pose.psi.to_degrees()),
    ]
}

const POSE_HEADER: [&str; 5] = ["t", "xm", "zm", "theta_deg", "psi_deg"];

fn cmd_ik(cfg: &RunConfig, common: &Common) -> std::result::Result<Outputs, Failure> {
    let (id, series) = single_trajectory(cfg, common)?;
    let mut rows = Vec::with_capacity(series.len());
    for (k, vp) in series.points.iter().enumerate() {
        let q = inverse_kinematics_active(&cfg.geometry, &vp.pose)
            .map_err(|e| unreachable(&e, &series, k))?;
        let mut row = pose_cells(&series, k);
        row.extend(q.iter().map(|v| fmt_num(*v)));
        rows.push(row);
    }
    let header: Vec<&str> = POSE_HEADER
        .iter()
        .copied()
        .chain(["q13", "q23", "q33", "q42"])
        .collect();
    let chart = line_chart(
        &format!("Actuated lengths along {id}"),
        "t (s)",
        "length (m)",
        &(0..4)
            .map(|i| {
                let pts = rows.iter().map(|r| {
                    (
                        r[0].parse().unwrap_or(f64::NAN),
                        r[5 + i].parse().unwrap_or(f64::NAN),
                    )
                });
                Series::new(header[5 + i], pts.collect())
            })
            .collect::<Vec<_>>(),
    );
    Ok(Outputs {
        files: vec![
            ("ik.csv".into(), csv_bytes(&header, &rows)),
            ("ik.svg".into(), chart.into_bytes()),
        ],
        code: EXIT_OK,
    })
}

fn cmd_detmap(cfg: &RunConfig, common: &Common) -> std::result::Result<Outputs, Failure> {
    let (id, series) = single_trajectory(cfg, common)?;
    let mut rows = Vec::with_capacity(series.len());
    let mut det_x = Vec::with_capacity(series.len());
    for (k, vp) in series.points.iter().enumerate() {
        let q =
            full_coordinates(&cfg.geometry, &vp.pose).map_err(|e| unreachable(&e, &series, k))?;
        let (_, dx) =
            forward_jacobian(&cfg.geometry, &vp.pose).map_err(|e| unreachable(&e, &series, k))?;
        let (phi_q_s, _) = split_jacobian(&constraint_jacobian(&cfg.geometry, &q));
        let (ds, _) = secondary_determinant(&phi_q_s);
        let mut row = pose_cells(&series, k);
        row.extend([fmt_num(dx), fmt_num(ds)]);
        rows.push(row);
        det_x.push((vp.t, dx));
    }
    let header: Vec<&str> = POSE_HEADER
        .iter()
        .copied()
        .chain(["det_phi_x", "det_phi_q_s"])
        .collect();
    let chart = line_chart(
        &format!("Determinant of the forward Jacobian along {id}"),
        "t (s)",
        "det(Phi_x)",
        &[Series::new("det(Phi_x)", det_x)],
    );
    Ok(Outputs {
        files: vec![
            ("detmap.csv".into(), csv_bytes(&header, &rows)),
            ("detmap.svg".into(), chart.into_bytes()),
        ],
        code: EXIT_OK,
    })
}

fn cmd_forces(cfg: &RunConfig, common: &Common) -> std::result::Result<Outputs, Failure> {
    let (id, series) = single_trajectory(cfg, common)?;
    let path = forces_along_path(&cfg.geometry, &cfg.physical, &series.points);
    let mut rows = Vec::with_capacity(series.len());
    let mut force_series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 4];
    let mut power_series: Vec<Vec<(f64, f64)>> = vec![Vec::new(); 4];
    for (k, ps) in path.iter().enumerate() {
        let (forces, power, note) = match &ps.solution {
            Ok(s) => (s.forces, s.power, String::new()),
            Err(e @ (Error::UnreachablePose { .. } | Error::DegenerateLimb { .. })) => {
                return Err(unreachable(e, &series, k))
            }
            Err(e) => (
                nalgebra::Vector4::repeat(f64::NAN),
                nalgebra::Vector4::repeat(f64::NAN),
                e.to_string(),
            ),
        };
        let mut row = pose_cells(&series, k);
        row.extend(forces.iter().chain(power.iter()).map(|v| fmt_num(*v)));
        row.extend([
            fmt_num(ps.det_phi_x),
            u8::from(ps.flagged).to_string(),
            note,
        ]);
        rows.push(row);
        for i in 0..4 {
            force_series[i].push((ps.t, forces[i]));
            power_series[i].push((ps.t, power[i]));
        }
    }
    let header: Vec<&str> = POSE_HEADER
        .iter()
        .copied()
        .chain([
            "F1",
            "F2",
            "F3",
            "F4",
            "P1",
            "P2",
            "P3",
            "P4",
            "det_phi_x",
            "flagged",
            "note",
        ])
        .collect();
    let named = |prefix: &str, data: Vec<Vec<(f64, f64)>>| {
        data.into_iter()
            .enumerate()
            .map(|(i, pts)| Series::new(format!("{prefix}{}", i + 1), pts))
            .collect::<Vec<_>>()
    };
    let forces_svg = line_chart(
        &format!("Active forces along {id}"),
        "t (s)",
        "force (N)",
        &named("F", force_series),
    );
    let power_svg = line_chart(
        &format!("Actuator power along {id}"),
        "t (s)",
        "power (W)",
        &named("P", power_series),
    );
    Ok(Outputs {
        files: vec![
            ("forces.csv".into(), csv_bytes(&header, &rows)),
            ("forces.svg".into(), forces_svg.into_bytes()),
            ("power.svg".into(), power_svg.into_bytes()),
        ],
        code: EXIT_OK,
    })
}

/// Everything an optimization run produced, as written to `bundle.json`.
#[derive(Debug, Clone, Serialize)]
pub struct Bundle {
    pub stage: &'static str,
    pub options: OptimizerOptions,
    pub physical: PhysicalParams,
    pub frozen: Option<MobileTriple>,
    pub stage1: Vec<RunOutcome>,
    pub stage2: Vec<RunOutcome>,
}

fn objective_cell(o: &RunOutcome) -> String {
    match &o.result {
        Some(r) => fmt_num(r.objective),
        None => String::new(),
    }
}

fn run_row(stage: &str, o: &RunOutcome, stage_of: Stage) -> Vec<String> {
    let width = stage_of.dimension();
    let mut row = vec![stage.to_string(), o.trajectory.clone()];
    match &o.result {
        Some(r) => {
            row.extend([
                serde_json::to_value(r.status)
                    .ok()
                    .and_then(|v| v.as_str().map(String::from))
                    .unwrap_or_default(),
                r.is_feasible().to_string(),
                fmt_num(r.objective),
            ]);
            let g = r.geometry;
            row.extend([
                fmt_num(g.r),
                fmt_num(g.rm),
                fmt_num(g.ds),
                fmt_num(g.beta_fd.to_degrees()),
                fmt_num(g.beta_fi.to_degrees()),
                fmt_num(g.beta_md.to_degrees()),
                fmt_num(g.beta_mi.to_degrees()),
            ]);
            row.extend([
                fmt_num(r.report.min_singularity_margin()),
                fmt_num(r.report.min_stroke_margin()),
                fmt_num(r.report.min_angle_margin().to_degrees()),
                r.report.det_sign_changes().to_string(),
                (r.iterations.len() - 1).to_string(),
                width.to_string(),
                r.message.clone(),
            ]);
        }
        None => {
            row.extend(["error".into(), "false".into()]);
            row.extend(std::iter::repeat_n(String::new(), 13));
            row.push(width.to_string());
            row.push(o.error.clone().unwrap_or_default());
        }
    }
    row
}

const RUN_HEADER: [&str; 19] = [
    "stage",
    "trajectory",
    "status",
    "feasible",
    "objective",
    "R",
    "Rm",
    "ds",
    "betaFD_deg",
    "betaFI_deg",
    "betaMD_deg",
    "betaMI_deg",
    "min_singularity_margin",
    "min_stroke_margin",
    "min_angle_margin_deg",
    "det_sign_changes",
    "iterations",
    "variables",
    "message",
];

fn geometry_rows(outcomes: &[RunOutcome]) -> Vec<Vec<String>> {
    outcomes
        .iter()
        .filter_map(|o| o.result.as_ref().map(|r| (o, r)))
        .map(|(o, r)| {
            let g = r.geometry;
            vec![
                o.trajectory.clone(),
                fmt_num(g.ds * 1e3),
                fmt_num(g.r * 1e3),
                fmt_num(g.beta_fd.to_degrees()),
                fmt_num(g.beta_fi.to_degrees()),
                fmt_num(g.rm * 1e3),
                fmt_num(g.beta_md.to_degrees()),
                fmt_num(g.beta_mi.to_degrees()),
            ]
        })
        .collect()
}

fn failed(outcomes: &[RunOutcome]) -> bool {
    outcomes.iter().any(|o| !o.is_feasible())
}

fn cmd_optimize(
    cfg: &RunConfig,
    common: &Common,
    stage: StageArg,
) -> std::result::Result<Outputs, Failure> {
    let trajectories = trajectory_set(cfg, common)?;
    let mut opts = cfg.optimizer;
    if let Some(seed) = common.seed.or(cfg.seed) {
        opts.seed = seed;
    }
    if opts.multistart == 0 {
        return Err(Failure::Config(
            "at `optimizer.multistart`: must be at least 1".into(),
        ));
    }
    if opts.objective_points < 2 {
        return Err(Failure::Config(
            "at `optimizer.objective_points`: must be at least 2".into(),
        ));
    }
    let phys = &cfg.physical;
    let outcome = |id: &str, r: crate::Result<OptimizationResult>| match r {
        Ok(result) => RunOutcome {
            trajectory: id.into(),
            result: Some(result),
            error: None,
        },
        Err(e) => RunOutcome {
            trajectory: id.into(),
            result: None,
            error: Some(e.to_string()),
        },
    };
    let result = match stage {
        StageArg::Pipeline => {
            run_pipeline(&trajectories, phys, &opts).map_err(|e| Failure::Config(e.to_string()))?
        }
        StageArg::Seven => PipelineResult {
            stage1: trajectories
                .iter()
                .map(|(id, s)| outcome(id, optimize_stage1(id, s, phys, &opts)))
                .collect(),
            frozen: None,
            stage2: Vec::new(),
        },
        StageArg::Four => {
            let frozen = cfg
                .frozen
                .unwrap_or_else(|| MobileTriple::of(&cfg.geometry));
            PipelineResult {
                stage1: Vec::new(),
                frozen: Some(frozen),
                stage2: trajectories
                    .iter()
                    .map(|(id, s)| outcome(id, optimize_stage2(id, s, phys, frozen, &opts)))
                    .collect(),
            }
        }
    };

    let ids: Vec<&str> = trajectories.iter().map(|(id, _)| id.as_str()).collect();
    let mut objective_rows = Vec::new();
    if !result.stage1.is_empty() {
        objective_rows.push(
            std::iter::once("F_7v".to_string())
                .chain(result.stage1.iter().map(objective_cell))
                .collect(),
        );
    }
    if !result.stage2.is_empty() {
        objective_rows.push(
            std::iter::once("F_4v".to_string())
                .chain(result.stage2.iter().map(objective_cell))
                .collect(),
        );
    }
    let objective_header: Vec<&str> = std::iter::once("objective_N2")
        .chain(ids.iter().copied())
        .collect();

    let mut runs = Vec::new();
    runs.extend(
        result
            .stage1
            .iter()
            .map(|o| run_row("seven", o, Stage::Seven)),
    );
    runs.extend(
        result
            .stage2
            .iter()
            .map(|o| run_row("four", o, Stage::Four)),
    );

    let geometry_header = [
        "trajectory",
        "ds_mm",
        "R_mm",
        "betaFD_deg",
        "betaFI_deg",
        "Rm_mm",
        "betaMD_deg",
        "betaMI_deg",
    ];
    let final_stage = if result.stage2.is_empty() {
        &result.stage1
    } else {
        &result.stage2
    };

    let stage_name = match stage {
        StageArg::Seven => "seven",
        StageArg::Four => "four",
        StageArg::Pipeline => "pipeline",
    };
    let bundle = Bundle {
        stage: stage_name,
        options: opts,
        physical: phys.clone(),
        frozen: result.frozen,
        stage1: result.stage1.clone(),
        stage2: result.stage2.clone(),
    };
    let mut json = serde_json::to_vec_pretty(&bundle).expect("bundle serializes");
    json.push(b'\n');

    let mut files = vec![
        (
            "objectives.csv".to_string(),
            csv_bytes(&objective_header, &objective_rows),
        ),
        (
            "geometries.csv".to_string(),
            csv_bytes(&geometry_header, &geometry_rows(final_stage)),
        ),
        ("runs.csv".to_string(), csv_bytes(&RUN_HEADER, &runs)),
        ("bundle.json".to_string(), json),
    ];
    if let Some(t) = result.frozen {
        let row = vec![
            fmt_num(t.rm),
            fmt_num(t.beta_md.to_degrees()),
            fmt_num(t.beta_mi.to_degrees()),
        ];
        files.push((
            "frozen.csv".into(),
            csv_bytes(&["Rm", "betaMD_deg", "betaMI_deg"], &[row]),
        ));
    }
    let code = if failed(&result.stage1) || failed(&result.stage2) {
        EXIT_PARTIAL
    } else {
        EXIT_OK
    };
    Ok(Outputs { files, code })
}

fn write_outputs(dir: &Path, outputs: &Outputs) -> std::io::Result<()> {
    std::fs::create_dir_all(dir)?;
    for (name, bytes) in &outputs.files {
        std::fs::write(dir.join(name), bytes)?;
    }
    Ok(())
}

/// Parses `args` (including the program name), runs the command and
/// returns the process exit code. Diagnostics go to stderr, the list of
/// written files to stdout.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
        }
    };
    let (common, stage) = match &cli.command {
        Command::Ik(c) | Command::Detmap(c) | Command::Forces(c) => (c, None),
        Command::Optimize { common, stage } => (common, Some(*stage)),
    };
    let cfg = match load_config(&common.config) {
        Ok(cfg) => cfg,
        Err(m) => {
            eprintln!("pkm: config error: {m}");
            return EXIT_CONFIG;
        }
    };
    let result = match &cli.command {
        Command::Ik(c) => cmd_ik(&cfg, c),
        Command::Detmap(c) => cmd_detmap(&cfg, c),
        Command::Forces(c) => cmd_forces(&cfg, c),
        Command::Optimize { common, .. } => {
            cmd_optimize(&cfg, common, stage.unwrap_or(StageArg::Pipeline))
        }
    };
    let outputs = match result {
        Ok(o) => o,
        Err(f) => {
            eprintln!("pkm: {f}");
            return f.code();
        }
    };
    let dir = common
        .out
        .clone()
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from("out"));
    if let Err(e) = write_outputs(&dir, &outputs) {
        eprintln!(
            "pkm: config error: output directory {} is not writable: {e}",
            dir.display()
        );
        return EXIT_CONFIG;
    }
    for (name, _) in &outputs.files {
        println!("{}", dir.join(name).display());
    }
    if outputs.code == EXIT_PARTIAL {
        eprintln!("pkm: at least one trajectory has no feasible design (see runs.csv)");
    }
    outputs.code
}
