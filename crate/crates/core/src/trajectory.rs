//! Rehabilitation test trajectories sampled into via points.

use std::io::Write;

use nalgebra::Vector4;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{ExternalWrench, PlatformPose};
use crate::report::{fmt_num, round_sig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TrajectoryKind {
    HorizontalLine,
    VerticalLine,
    /// Straight line in the sagittal plane at angle `incline` from `X_f`.
    InclinedLine,
    /// `z = z0 + a * sqrt(1 - (x / b)^2)` with `x` advancing at `v0`.
    Ellipse,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OrientationMode {
    Constant,
    Variable,
}

/// Parameters of one test trajectory. In memory all angles are radians; on
/// disk `theta0`, `psi0` and `incline` are degrees while the angular rates
/// stay in rad/s.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "SpecDoc", into = "SpecDoc")]
pub struct TrajectorySpec {
    pub kind: TrajectoryKind,
    pub orientation: OrientationMode,
    pub x0: f64,
    pub z0: f64,
    pub v0: f64,
    pub a: f64,
    pub b: f64,
    pub incline: f64,
    pub theta0: f64,
    pub psi0: f64,
    pub omega_theta: f64,
    pub omega_psi: f64,
    pub duration: f64,
    pub dt: f64,
    pub wrench: ExternalWrench,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct SpecDoc {
    kind: TrajectoryKind,
    orientation: OrientationMode,
    x0: f64,
    z0: f64,
    v0: f64,
    #[serde(default)]
    a: f64,
    #[serde(default)]
    b: f64,
    #[serde(default)]
    incline: f64,
    theta0: f64,
    psi0: f64,
    #[serde(default)]
    omega_theta: f64,
    #[serde(default)]
    omega_psi: f64,
    duration: f64,
    dt: f64,
    #[serde(default = "default_wrench")]
    wrench: ExternalWrench,
}

impl From<SpecDoc> for TrajectorySpec {
    fn from(d: SpecDoc) -> Self {
        Self {
            kind: d.kind,
            orientation: d.orientation,
            x0: d.x0,
            z0: d.z0,
            v0: d.v0,
            a: d.a,
            b: d.b,
            incline: d.incline.to_radians(),
            theta0: d.theta0.to_radians(),
            psi0: d.psi0.to_radians(),
            omega_theta: d.omega_theta,
            omega_psi: d.omega_psi,
            duration: d.duration,
            dt: d.dt,
            wrench: d.wrench,
        }
    }
}

impl From<TrajectorySpec> for SpecDoc {
    fn from(s: TrajectorySpec) -> Self {
        Self {
            kind: s.kind,
            orientation: s.orientation,
            x0: s.x0,
            z0: s.z0,
            v0: s.v0,
            a: s.a,
            b: s.b,
            incline: round_sig(s.incline.to_degrees()),
            theta0: round_sig(s.theta0.to_degrees()),
            psi0: round_sig(s.psi0.to_degrees()),
            omega_theta: s.omega_theta,
            omega_psi: s.omega_psi,
            duration: s.duration,
            dt: s.dt,
            wrench: s.wrench,
        }
    }
}

/// Patient load used for every catalog trajectory: 45 N forward and 45 N
/// down in the mobile frame, no torque.
pub fn default_wrench() -> ExternalWrench {
    ExternalWrench::force([45.0, 0.0, -45.0])
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0) || !(self.duration > 0.0) {
            return Err(Error::Invalid(
                "trajectory needs dt > 0 and duration > 0".into(),
            ));
        }
        if self.kind == TrajectoryKind::Ellipse && !(self.b > 0.0) {
            return Err(Error::Invalid("ellipse needs b > 0".into()));
        }
        Ok(())
    }

    /// Number of samples on the `dt` grid within `[0, duration]`.
    pub fn sample_count(&self) -> usize {
        (self.duration / self.dt + 1e-9).floor() as usize + 1
    }

    /// Pose and its time derivative at time `t`.
    pub fn evaluate(&self, t: f64) -> Result<(PlatformPose, Vector4<f64>)> {
        let (xm, zm, xdot, zdot) = match self.kind {
            TrajectoryKind::HorizontalLine => (self.x0 + self.v0 * t, self.z0, self.v0, 0.0),
            TrajectoryKind::VerticalLine => (self.x0, self.z0 + self.v0 * t, 0.0, self.v0),
            TrajectoryKind::InclinedLine => {
                let (s, c) = self.incline.sin_cos();
                (
                    self.x0 + self.v0 * c * t,
                    self.z0 + self.v0 * s * t,
                    self.v0 * c,
                    self.v0 * s,
                )
            }
            TrajectoryKind::Ellipse => {
                let x = self.x0 + self.v0 * t;
                let ratio = x / self.b;
                if ratio.abs() > 1.0 {
                    return Err(Error::EllipseDomain {
                        t,
                        ratio: ratio.abs(),
                    });
                }
                let root = (1.0 - ratio * ratio).sqrt();
                let zdot = -self.a * (x / (self.b * self.b)) * self.v0 / root;
                (x, self.z0 + self.a * root, self.v0, zdot)
            }
        };
        let (theta, psi, thetadot, psidot) = match self.orientation {
            OrientationMode::Constant => (self.theta0, self.psi0, 0.0, 0.0),
            OrientationMode::Variable => (
                self.theta0 + self.omega_theta * t,
                self.psi0 + self.omega_psi * t,
                self.omega_theta,
                self.omega_psi,
            ),
        };
        Ok((
            PlatformPose::new(xm, zm, theta, psi),
            Vector4::new(xdot, zdot, thetadot, psidot),
        ))
    }
}

/// One sample of a trajectory.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ViaPoint {
    pub t: f64,
    pub pose: PlatformPose,
    /// `(xdot, zdot, thetadot, psidot)`.
    pub rates: Vector4<f64>,
    pub wrench: ExternalWrench,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ViaPointSeries {
    pub points: Vec<ViaPoint>,
    /// Generating law, kept so the series can be resampled exactly.
    pub spec: Option<TrajectorySpec>,
}

impl ViaPointSeries {
    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn poses(&self) -> Vec<PlatformPose> {
        self.points.iter().map(|p| p.pose).collect()
    }

    /// Writes the series as CSV with angles in degrees.
    pub fn write_csv<W: Write>(&self, out: W) -> std::io::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "t",
            "xm",
            "zm",
            "theta_deg",
            "psi_deg",
            "xdot",
            "zdot",
            "thetadot",
            "psidot",
            "Fx",
            "Fy",
            "Fz",
            "Tx",
            "Ty",
            "Tz",
        ])?;
        for p in &self.points {
            let mut row = vec![
                fmt_num(p.t),
                fmt_num(p.pose.xm),
                fmt_num(p.pose.zm),
                fmt_num(p.pose.theta.to_degrees()),
                fmt_num(p.pose.psi.to_degrees()),
            ];
            row.extend(p.rates.iter().map(|v| fmt_num(*v)));
            row.extend(
                p.wrench
                    .force
                    .iter()
                    .chain(&p.wrench.torque)
                    .map(|v| fmt_num(*v)),
            );
            w.write_record(&row)?;
        }
        w.flush()
    }
}

pub fn build(spec: &TrajectorySpec) -> Result<ViaPointSeries> {
    spec.validate()?;
    let points = (0..spec.sample_count())
        .map(|k| {
            let t = k as f64 * spec.dt;
            let (pose, rates) = spec.evaluate(t)?;
            Ok(ViaPoint {
                t,
                pose,
                rates,
                wrench: spec.wrench,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(ViaPointSeries {
        points,
        spec: Some(*spec),
    })
}

/// `p` via points uniformly spaced in time between the first and last
/// sample. Uses the generating law when known, otherwise interpolates.
pub fn resample(series: &ViaPointSeries, p: usize) -> Result<ViaPointSeries> {
    if p < 2 {
        return Err(Error::Invalid(
            "resampling needs at least two points".into(),
        ));
    }
    let n = series.len();
    if n == 0 {
        return Err(Error::Invalid("cannot resample an empty series".into()));
    }
    if p == n {
        return Ok(series.clone());
    }
    let (t0, t1) = (series.points[0].t, series.points[n - 1].t);
    let times = (0..p).map(|k| {
        if k == p - 1 {
            t1
        } else {
            t0 + (t1 - t0) * k as f64 / (p - 1) as f64
        }
    });
    let points = match &series.spec {
        Some(spec) => times
            .map(|t| {
                let (pose, rates) = spec.evaluate(t)?;
                Ok(ViaPoint {
                    t,
                    pose,
                    rates,
                    wrench: spec.wrench,
                })
            })
            .collect::<Result<Vec<_>>>()?,
        None => times.map(|t| interpolate(&series.points, t)).collect(),
    };
    Ok(ViaPointSeries {
        points,
        spec: series.spec,
    })
}

fn interpolate(points: &[ViaPoint], t: f64) -> ViaPoint {
    let k = points
        .partition_point(|p| p.t <= t)
        .clamp(1, points.len().max(2) - 1);
    if points.len() == 1 {
        return points[0];
    }
    let (a, b) = (&points[k - 1], &points[k]);
    let s = if b.t > a.t {
        (t - a.t) / (b.t - a.t)
    } else {
        0.0
    };
    let pose =
        PlatformPose::from_vector(&(a.pose.to_vector() * (1.0 - s) + b.pose.to_vector() * s));
    ViaPoint {
        t,
        pose,
        rates: a.rates * (1.0 - s) + b.rates * s,
        wrench: a.wrench,
    }
}

/// Identifiers of the eight catalog trajectories.
pub const CATALOG_IDS: [&str; 8] = ["Tr1", "Tr2", "Tr3", "Tr4", "Tr5", "Tr6", "Tr7", "Tr8"];

/// The published elliptical trajectory with variable orientation.
pub fn tr8() -> TrajectorySpec {
    TrajectorySpec {
        kind: TrajectoryKind::Ellipse,
        orientation: OrientationMode::Variable,
        x0: -0.15,
        z0: 0.25,
        v0: 0.015,
        a: 0.40,
        b: 0.20,
        incline: 0.0,
        theta0: 30f64.to_radians(),
        psi0: 0.0,
        omega_theta: -0.05,
        omega_psi: -0.05,
        duration: 20.0,
        dt: 0.30,
        wrench: default_wrench(),
    }
}

/// The eight test trajectories. Tr8 is the published one; Tr1 to Tr7 were
/// calibrated (see `examples/calibrate_catalog.rs`) so that under the
/// initial geometry and default physical parameters each exhibits exactly
/// the difficulties of its class: forward singularity, stroke overrun, or
/// both.
pub fn catalog() -> Vec<(&'static str, TrajectorySpec)> {
    let line = |kind,
                orientation,
                x0: f64,
                z0: f64,
                v0: f64,
                incline_deg: f64,
                angles: [f64; 4],
                duration: f64| {
        TrajectorySpec {
            kind,
            orientation,
            x0,
            z0,
            v0,
            a: 0.0,
            b: 0.0,
            incline: incline_deg.to_radians(),
            theta0: angles[0].to_radians(),
            psi0: angles[1].to_radians(),
            omega_theta: angles[2],
            omega_psi: angles[3],
            duration,
            dt: 0.30,
            wrench: default_wrench(),
        }
    };
    use OrientationMode::{Constant, Variable};
    use TrajectoryKind::{Ellipse, HorizontalLine, InclinedLine, VerticalLine};
    vec![
        (
            "Tr1",
            line(
                HorizontalLine,
                Constant,
                -0.048,
                0.631,
                0.02,
                0.0,
                [0.0, 0.0, 0.0, 0.0],
                10.0,
            ),
        ),
        (
            "Tr2",
            line(
                HorizontalLine,
                Variable,
                -0.048,
                0.631,
                0.02,
                0.0,
                [0.0, 0.0, 0.0, 0.02],
                10.0,
            ),
        ),
        (
            "Tr3",
            line(
                VerticalLine,
                Constant,
                0.0,
                0.45,
                0.02,
                0.0,
                [20.0, 0.0, 0.0, 0.0],
                10.0,
            ),
        ),
        (
            "Tr4",
            line(
                VerticalLine,
                Variable,
                0.0,
                0.45,
                0.02,
                0.0,
                [0.0, 0.0, 0.0, 0.02],
                10.0,
            ),
        ),
        (
            "Tr5",
            line(
                InclinedLine,
                Constant,
                -0.15,
                0.45,
                0.02,
                45.0,
                [-10.0, -20.0, 0.0, 0.0],
                10.0,
            ),
        ),
        (
            "Tr6",
            line(
                InclinedLine,
                Variable,
                -0.1,
                0.5,
                0.02,
                45.0,
                [-20.0, 0.0, 0.02, -0.02],
                10.0,
            ),
        ),
        (
            "Tr7",
            TrajectorySpec {
                kind: Ellipse,
                orientation: Constant,
                a: 0.5,
                theta0: (-20f64).to_radians(),
                psi0: (-10f64).to_radians(),
                omega_theta: 0.0,
                omega_psi: 0.0,
                ..tr8()
            },
        ),
        ("Tr8", tr8()),
    ]
}

pub fn catalog_entry(id: &str) -> Option<TrajectorySpec> {
    catalog()
        .into_iter()
        .find(|(name, _)| *name == id)
        .map(|(_, s)| s)
}
