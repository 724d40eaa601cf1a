//! Deterministic synthetic scenes.
//!
//! Generates ground-truth bodies, camera trajectories, and noisy
//! per-frame observations (bounding boxes, surface points with injected
//! outliers, edge segments) to drive and validate the mapping pipeline.
//! Everything is a pure function of the scene seed and frame id, so
//! frames can be generated in any order with identical results.

use nalgebra::{Rotation2, Vector2, Vector3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, UnitSphere};
use serde::{Deserialize, Serialize};

use crate::camera::{project_point, project_segment, BBox, CameraFrame, Intrinsics, Segment2D};
use crate::mapper::{evaluate, EvalReport, FrameReport, MapError, ObjectMap, Observation, PipelineConfig};
use crate::superquadric::Superquadric;

/// Version stamp for scenario and ground-truth files.
pub const SCENARIO_FORMAT_VERSION: u32 = 1;

/// Bodies with both shape exponents at or below this get edge segments.
pub const SEGMENT_EPS_MAX: f64 = 0.3;

/// Errors raised while validating or running a scenario.
#[derive(Debug)]
pub enum SimError {
    BadScene { message: String },
    BadNoise { message: &'static str },
    BadTrajectory { message: &'static str },
    UnsupportedFormatVersion { got: u32 },
    Map(MapError),
}

impl std::fmt::Display for SimError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SimError::BadScene { message } => write!(f, "bad scene: {message}"),
            SimError::BadNoise { message } => write!(f, "bad noise spec: {message}"),
            SimError::BadTrajectory { message } => write!(f, "bad trajectory: {message}"),
            SimError::UnsupportedFormatVersion { got } => {
                write!(f, "unsupported format_version {got}, expected {SCENARIO_FORMAT_VERSION}")
            }
            SimError::Map(e) => write!(f, "pipeline failed: {e}"),
        }
    }
}

impl std::error::Error for SimError {}

impl From<MapError> for SimError {
    fn from(e: MapError) -> Self {
        SimError::Map(e)
    }
}

/// One ground-truth object.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SceneObject {
    pub class_label: u32,
    pub body: Superquadric,
}

/// Ground-truth scene: labeled bodies inside axis-aligned world bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SceneSpec {
    pub objects: Vec<SceneObject>,
    /// Base seed for all observation noise.
    pub seed: u64,
    pub bounds_min: [f64; 3],
    pub bounds_max: [f64; 3],
}

impl SceneSpec {
    pub fn validate(&self) -> Result<(), SimError> {
        for axis in 0..3 {
            if !(self.bounds_min[axis] < self.bounds_max[axis]) {
                return Err(SimError::BadScene {
                    message: format!("bounds_min must be below bounds_max on axis {axis}"),
                });
            }
        }
        for (i, obj) in self.objects.iter().enumerate() {
            let (lo, hi) = obj.body.aabb();
            for axis in 0..3 {
                if lo[axis] < self.bounds_min[axis] || hi[axis] > self.bounds_max[axis] {
                    return Err(SimError::BadScene {
                        message: format!("object {i} extends outside the world bounds on axis {axis}"),
                    });
                }
            }
        }
        Ok(())
    }

    /// Mean of the object centers; the world origin for an empty scene.
    pub fn centroid(&self) -> Vector3<f64> {
        if self.objects.is_empty() {
            return Vector3::zeros();
        }
        let sum: Vector3<f64> =
            self.objects.iter().map(|o| o.body.pose.translation()).sum();
        sum / self.objects.len() as f64
    }
}

/// Observation noise model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct NoiseSpec {
    /// 3D point noise, standard deviation per component (length units).
    pub point_sigma: f64,
    /// Bounding-box edge noise, standard deviation (pixels).
    pub bbox_sigma: f64,
    /// Segment direction noise, standard deviation (degrees).
    pub segment_angle_sigma: f64,
    /// Outliers injected per observation, as a fraction of the inlier count.
    pub outlier_fraction: f64,
    /// Outliers are placed within this distance of the object center.
    pub outlier_radius: f64,
    /// Probability of dropping an entire observation.
    pub detection_dropout: f64,
}

impl Default for NoiseSpec {
    fn default() -> Self {
        NoiseSpec {
            point_sigma: 0.01,
            bbox_sigma: 1.5,
            segment_angle_sigma: 2.0,
            outlier_fraction: 0.1,
            outlier_radius: 2.0,
            detection_dropout: 0.05,
        }
    }
}

impl NoiseSpec {
    /// A completely noise-free spec.
    pub fn none() -> Self {
        NoiseSpec {
            point_sigma: 0.0,
            bbox_sigma: 0.0,
            segment_angle_sigma: 0.0,
            outlier_fraction: 0.0,
            outlier_radius: 1.0,
            detection_dropout: 0.0,
        }
    }

    pub fn validate(&self) -> Result<(), SimError> {
        let nonneg = |v: f64| v.is_finite() && v >= 0.0;
        if !nonneg(self.point_sigma) {
            return Err(SimError::BadNoise { message: "point_sigma must be finite and >= 0" });
        }
        if !nonneg(self.bbox_sigma) {
            return Err(SimError::BadNoise { message: "bbox_sigma must be finite and >= 0" });
        }
        if !nonneg(self.segment_angle_sigma) {
            return Err(SimError::BadNoise {
                message: "segment_angle_sigma must be finite and >= 0",
            });
        }
        if !(self.outlier_fraction >= 0.0 && self.outlier_fraction <= 0.5) {
            return Err(SimError::BadNoise { message: "outlier_fraction must be in [0, 0.5]" });
        }
        if !(self.outlier_radius.is_finite() && self.outlier_radius > 0.0) {
            return Err(SimError::BadNoise { message: "outlier_radius must be positive" });
        }
        if !(self.detection_dropout >= 0.0 && self.detection_dropout <= 1.0) {
            return Err(SimError::BadNoise { message: "detection_dropout must be in [0, 1]" });
        }
        Ok(())
    }
}

/// Camera path shape.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TrajectoryKind {
    /// Circles the scene centroid at a fixed height, always looking at it.
    Orbit { radius: f64, height: f64 },
    /// Straight line from `start` to `end`, looking at the centroid.
    Linear { start: [f64; 3], end: [f64; 3] },
    /// Explicit eye positions, cycled if shorter than the frame count.
    Waypoints { eyes: Vec<[f64; 3]> },
}

/// Camera path: a shape, a frame count, and shared intrinsics.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySpec {
    #[serde(flatten)]
    pub kind: TrajectoryKind,
    pub n_frames: u64,
    pub intrinsics: Intrinsics,
}

impl TrajectorySpec {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.n_frames == 0 {
            return Err(SimError::BadTrajectory { message: "n_frames must be at least 1" });
        }
        let k = &self.intrinsics;
        if !(k.fx > 0.0 && k.fy > 0.0) || k.width == 0 || k.height == 0 {
            return Err(SimError::BadTrajectory {
                message: "intrinsics need positive focal lengths and a nonzero image size",
            });
        }
        match &self.kind {
            TrajectoryKind::Orbit { radius, height } => {
                if !(radius.is_finite() && *radius > 0.0) {
                    return Err(SimError::BadTrajectory { message: "orbit radius must be positive" });
                }
                if !height.is_finite() {
                    return Err(SimError::BadTrajectory { message: "orbit height must be finite" });
                }
            }
            TrajectoryKind::Linear { start, end } => {
                let ok = start.iter().chain(end.iter()).all(|v| v.is_finite());
                if !ok {
                    return Err(SimError::BadTrajectory {
                        message: "linear endpoints must be finite",
                    });
                }
            }
            TrajectoryKind::Waypoints { eyes } => {
                if eyes.is_empty() {
                    return Err(SimError::BadTrajectory {
                        message: "waypoints need at least one eye position",
                    });
                }
                if !eyes.iter().flatten().all(|v| v.is_finite()) {
                    return Err(SimError::BadTrajectory { message: "waypoints must be finite" });
                }
            }
        }
        Ok(())
    }
}

/// Builds the camera frames for a trajectory over a scene. Frame ids run
/// from 1 to `n_frames`; every frame looks at the scene centroid.
pub fn generate_trajectory(spec: &TrajectorySpec, scene: &SceneSpec) -> Result<Vec<CameraFrame>, SimError> {
    spec.validate()?;
    let target = scene.centroid();
    let n = spec.n_frames;
    let mut frames = Vec::with_capacity(n as usize);
    for i in 0..n {
        let eye = match &spec.kind {
            TrajectoryKind::Orbit { radius, height } => {
                let phi = std::f64::consts::TAU * i as f64 / n as f64;
                Vector3::new(
                    target.x + radius * phi.cos(),
                    target.y + radius * phi.sin(),
                    *height,
                )
            }
            TrajectoryKind::Linear { start, end } => {
                let s = Vector3::from(*start);
                let e = Vector3::from(*end);
                let t = if n == 1 { 0.0 } else { i as f64 / (n - 1) as f64 };
                s + (e - s) * t
            }
            TrajectoryKind::Waypoints { eyes } => {
                Vector3::from(eyes[(i as usize) % eyes.len()])
            }
        };
        if (eye - target).norm() < 1e-9 {
            return Err(SimError::BadTrajectory {
                message: "camera eye coincides with the look target",
            });
        }
        frames.push(CameraFrame::look_at(i + 1, eye, target, spec.intrinsics));
    }
    Ok(frames)
}

/// One emitted observation plus its generation metadata.
#[derive(Debug, Clone)]
pub struct DetailedObservation {
    pub observation: Observation,
    /// Aligned with `observation.points_world`; true marks an injected
    /// outlier.
    pub outlier_mask: Vec<bool>,
    /// Index of the source object in `scene.objects`.
    pub object_index: usize,
    /// Tight box over the emitted points before box noise; every emitted
    /// point projects inside it.
    pub tight_bbox: BBox,
}

/// Number of surface-direction samples drawn per object per frame; the
/// camera-facing subset (roughly half) becomes the observation.
pub const SURFACE_SAMPLES_PER_FRAME: usize = 200;

/// Surface point in the direction of the object-frame unit vector `q`,
/// using the inside-outside scaling identity: scaling the argument by `s`
/// scales `F` by `s^(2/eps1)`, so `s = F(q)^(-eps1/2)` lands exactly on
/// the surface. Radial projection keeps coverage proportional to solid
/// angle, so the side faces of box-like bodies are sampled even though
/// the parameter-grid sampler starves them (for eps1 = 0.1 the grid maps
/// nearly every row onto the top and bottom faces).
fn surface_point_along(body: &Superquadric, q: &Vector3<f64>) -> Option<Vector3<f64>> {
    let f = body.inside_outside(&body.pose.object_to_world(q));
    if !(f.is_finite() && f > 0.0) {
        return None;
    }
    let s = f.powf(-body.shape.eps1() / 2.0);
    if !s.is_finite() {
        return None;
    }
    Some(body.pose.object_to_world(&(q * s)))
}

/// Outward direction of steepest inside-outside increase at `p`.
fn outward_gradient(body: &Superquadric, p: &Vector3<f64>) -> Vector3<f64> {
    let h = 1e-5;
    let mut g = Vector3::zeros();
    for axis in 0..3 {
        let mut hi = *p;
        let mut lo = *p;
        hi[axis] += h;
        lo[axis] -= h;
        g[axis] = (body.inside_outside(&hi) - body.inside_outside(&lo)) / (2.0 * h);
    }
    g
}

/// Samples the noisy observations for one frame, with outlier labels.
///
/// Per object: surface points are sampled by projecting random unit
/// directions radially onto the body, kept when camera-facing and in
/// front of the camera, and perturbed in 3D; the bounding box is the
/// tight box over the projected kept points, then edge-perturbed and
/// clipped; near-cuboid bodies also emit the projections of their 12 box
/// edges with direction noise; outliers are injected off-body but
/// reprojecting inside the tight box; finally the whole observation may
/// drop out. Deterministic per (scene seed, frame id).
pub fn observe_frame_detailed(
    scene: &SceneSpec,
    frame: &CameraFrame,
    noise: &NoiseSpec,
) -> Vec<DetailedObservation> {
    let mut rng = ChaCha8Rng::seed_from_u64(scene.seed);
    rng.set_stream(frame.frame_id.wrapping_add(1));
    let point_noise = Normal::new(0.0, noise.point_sigma).expect("validated sigma");
    let bbox_noise = Normal::new(0.0, noise.bbox_sigma).expect("validated sigma");
    let angle_noise =
        Normal::new(0.0, noise.segment_angle_sigma.to_radians()).expect("validated sigma");
    let cam_center = frame.center();

    let mut out = Vec::new();
    for (object_index, obj) in scene.objects.iter().enumerate() {
        // Camera-facing, in-front surface points with 3D noise.
        let mut points: Vec<Vector3<f64>> = Vec::new();
        for _ in 0..SURFACE_SAMPLES_PER_FRAME {
            let dir: [f64; 3] = UnitSphere.sample(&mut rng);
            let Some(position) = surface_point_along(&obj.body, &Vector3::from(dir)) else {
                continue;
            };
            let normal = outward_gradient(&obj.body, &position);
            if normal.dot(&(cam_center - position)) <= 0.0 {
                continue;
            }
            if project_point(frame, &position).is_none() {
                continue;
            }
            let jitter = Vector3::new(
                point_noise.sample(&mut rng),
                point_noise.sample(&mut rng),
                point_noise.sample(&mut rng),
            );
            points.push(position + jitter);
        }

        // Tight box over the projections of the noisy points; the noise can
        // push a point behind the camera only in degenerate scenes, so such
        // points are simply dropped.
        let mut projected: Vec<Vector2<f64>> = Vec::new();
        let mut kept: Vec<Vector3<f64>> = Vec::new();
        for p in points {
            if let Some(px) = project_point(frame, &p) {
                projected.push(px);
                kept.push(p);
            }
        }
        if kept.len() < 2 {
            continue;
        }
        let mut lo = projected[0];
        let mut hi = projected[0];
        for px in &projected[1..] {
            lo = lo.inf(px);
            hi = hi.sup(px);
        }
        let Ok(tight_bbox) = BBox::new(lo.x, lo.y, hi.x, hi.y) else { continue };

        // Edge segments for near-cuboid bodies only.
        let mut segments = Vec::new();
        if obj.body.shape.eps1() <= SEGMENT_EPS_MAX && obj.body.shape.eps2() <= SEGMENT_EPS_MAX {
            for (a, b) in box_edges(&obj.body) {
                let Some(seg) = project_segment(frame, &a, &b) else { continue };
                let delta = angle_noise.sample(&mut rng);
                let rot = Rotation2::new(delta);
                let mid = seg.midpoint();
                let half_a = rot * (seg.a - mid);
                let half_b = rot * (seg.b - mid);
                if let Ok(s) = Segment2D::new(mid + half_a, mid + half_b) {
                    segments.push(s);
                }
            }
        }

        // Inject outliers: off the body (F > 1) but reprojecting inside the
        // tight box, mimicking bad depth inside a correct detection.
        let n_outliers = (noise.outlier_fraction * kept.len() as f64).round() as usize;
        let center = obj.body.pose.translation();
        let mut outliers = Vec::with_capacity(n_outliers);
        for _ in 0..n_outliers {
            for _attempt in 0..200 {
                let dir: [f64; 3] = UnitSphere.sample(&mut rng);
                let r = noise.outlier_radius * rng.random_range(0.0..1.0_f64).cbrt();
                let p = center + Vector3::from(dir) * r;
                if obj.body.inside_outside(&p) <= 1.0 {
                    continue;
                }
                let Some(px) = project_point(frame, &p) else { continue };
                if !tight_bbox.contains(&px) {
                    continue;
                }
                outliers.push(p);
                break;
            }
        }

        // Box noise, then clip to the image.
        let nx0 = tight_bbox.xmin + bbox_noise.sample(&mut rng);
        let ny0 = tight_bbox.ymin + bbox_noise.sample(&mut rng);
        let nx1 = tight_bbox.xmax + bbox_noise.sample(&mut rng);
        let ny1 = tight_bbox.ymax + bbox_noise.sample(&mut rng);
        let Ok(noisy_bbox) = BBox::new(nx0.min(nx1), ny0.min(ny1), nx0.max(nx1), ny0.max(ny1))
        else {
            continue;
        };
        let Some(bbox) = noisy_bbox.clip(frame.intrinsics.width, frame.intrinsics.height) else {
            continue;
        };

        // Whole-observation dropout, drawn last so the stream layout per
        // object does not depend on the outcome.
        if rng.random_range(0.0..1.0) < noise.detection_dropout {
            continue;
        }

        let mut outlier_mask = vec![false; kept.len()];
        outlier_mask.extend(std::iter::repeat_n(true, outliers.len()));
        let mut points_world = kept;
        points_world.extend(outliers);

        out.push(DetailedObservation {
            observation: Observation {
                frame_id: frame.frame_id,
                class_label: obj.class_label,
                bbox,
                points_world,
                segments,
            },
            outlier_mask,
            object_index,
            tight_bbox,
        });
    }
    out
}

/// `observe_frame_detailed` without the metadata.
pub fn observe_frame(scene: &SceneSpec, frame: &CameraFrame, noise: &NoiseSpec) -> Vec<Observation> {
    observe_frame_detailed(scene, frame, noise)
        .into_iter()
        .map(|d| d.observation)
        .collect()
}

/// The 12 edges of the body's object-frame bounding box, in world
/// coordinates. Corner order encodes the axis signs bitwise.
fn box_edges(body: &Superquadric) -> Vec<(Vector3<f64>, Vector3<f64>)> {
    let (ax, ay, az) = (body.size.ax(), body.size.ay(), body.size.az());
    let corner = |mask: usize| {
        let sx = if mask & 1 == 0 { -1.0 } else { 1.0 };
        let sy = if mask & 2 == 0 { -1.0 } else { 1.0 };
        let sz = if mask & 4 == 0 { -1.0 } else { 1.0 };
        body.pose.object_to_world(&Vector3::new(sx * ax, sy * ay, sz * az))
    };
    let mut edges = Vec::with_capacity(12);
    for a in 0..8usize {
        for axis in [1usize, 2, 4] {
            let b = a | axis;
            if a & axis == 0 {
                edges.push((corner(a), corner(b)));
            }
        }
    }
    edges
}

/// A full experiment description, as stored in a scenario JSON file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub format_version: u32,
    pub scene: SceneSpec,
    pub noise: NoiseSpec,
    pub trajectory: TrajectorySpec,
}

impl Scenario {
    pub fn validate(&self) -> Result<(), SimError> {
        if self.format_version != SCENARIO_FORMAT_VERSION {
            return Err(SimError::UnsupportedFormatVersion { got: self.format_version });
        }
        self.scene.validate()?;
        self.noise.validate()?;
        self.trajectory.validate()?;
        Ok(())
    }
}

/// Ground-truth dump: the labeled bodies of a scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthFile {
    pub format_version: u32,
    pub objects: Vec<SceneObject>,
}

impl TruthFile {
    pub fn from_scene(scene: &SceneSpec) -> Self {
        TruthFile { format_version: SCENARIO_FORMAT_VERSION, objects: scene.objects.clone() }
    }
}

/// Everything a scenario run produces.
#[derive(Debug, Clone)]
pub struct ScenarioOutcome {
    pub map: ObjectMap,
    pub eval: EvalReport,
    pub frame_reports: Vec<FrameReport>,
}

/// Runs the full pipeline over a scenario: generate frames, observe,
/// process, finalize, and score against the ground truth. Deterministic
/// per (scene seed, eval seed).
pub fn run_scenario(
    scenario: &Scenario,
    cfg: &PipelineConfig,
    eval_samples: usize,
    eval_seed: u64,
) -> Result<ScenarioOutcome, SimError> {
    scenario.validate()?;
    let frames = generate_trajectory(&scenario.trajectory, &scenario.scene)?;
    let mut map = ObjectMap::new();
    let mut frame_reports = Vec::with_capacity(frames.len());
    for frame in &frames {
        let observations = observe_frame(&scenario.scene, frame, &scenario.noise);
        frame_reports.push(map.process_frame(frame, &observations, cfg)?);
    }
    map.finalize(cfg)?;
    let truths: Vec<Superquadric> = scenario.scene.objects.iter().map(|o| o.body).collect();
    let eval = evaluate(&map, &truths, eval_samples, eval_seed);
    Ok(ScenarioOutcome { map, eval, frame_reports })
}

/// The standard five-object benchmark: two same-class boxes, an ellipsoid,
/// a cylinder-like body, and an elongated box, orbited for 200 frames
/// under default noise.
pub fn benchmark_scenario() -> Scenario {
    let body = |ax: f64, ay: f64, az: f64, e1: f64, e2: f64, yaw: f64, t: [f64; 3]| {
        Superquadric::new(
            crate::superquadric::SizeParams::new(ax, ay, az).expect("valid size"),
            crate::superquadric::ShapeParams::new(e1, e2).expect("valid shape"),
            crate::superquadric::ObjectPose::new(yaw, Vector3::new(t[0], t[1], t[2]))
                .expect("valid pose"),
        )
    };
    let objects = vec![
        SceneObject { class_label: 1, body: body(0.45, 0.35, 0.3, 0.1, 0.1, 0.3, [-2.0, -2.0, 0.3]) },
        SceneObject { class_label: 1, body: body(0.5, 0.4, 0.35, 0.1, 0.1, -0.5, [2.0, -2.0, 0.35]) },
        SceneObject { class_label: 2, body: body(0.4, 0.3, 0.35, 1.0, 1.0, 0.2, [-2.0, 2.0, 0.35]) },
        SceneObject { class_label: 3, body: body(0.3, 0.3, 0.5, 0.1, 1.0, 0.0, [2.0, 2.0, 0.5]) },
        SceneObject { class_label: 4, body: body(0.8, 0.25, 0.25, 0.1, 0.1, 0.7, [0.0, 0.0, 0.25]) },
    ];
    Scenario {
        format_version: SCENARIO_FORMAT_VERSION,
        scene: SceneSpec {
            objects,
            seed: 42,
            bounds_min: [-5.0, -5.0, -0.5],
            bounds_max: [5.0, 5.0, 3.0],
        },
        noise: NoiseSpec::default(),
        trajectory: TrajectorySpec {
            kind: TrajectoryKind::Orbit { radius: 6.0, height: 5.0 },
            n_frames: 200,
            intrinsics: Intrinsics::new(525.0, 525.0, 319.5, 239.5, 640, 480)
                .expect("valid intrinsics"),
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::superquadric::{ObjectPose, ShapeParams, SizeParams};
    use approx::assert_abs_diff_eq;

    fn body(ax: f64, ay: f64, az: f64, e1: f64, e2: f64, yaw: f64, t: [f64; 3]) -> Superquadric {
        Superquadric::new(
            SizeParams::new(ax, ay, az).unwrap(),
            ShapeParams::new(e1, e2).unwrap(),
            ObjectPose::new(yaw, Vector3::new(t[0], t[1], t[2])).unwrap(),
        )
    }

    fn test_intrinsics() -> Intrinsics {
        Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn one_cube_scene() -> SceneSpec {
        SceneSpec {
            objects: vec![SceneObject {
                class_label: 1,
                body: body(0.4, 0.3, 0.25, 0.1, 0.1, 0.3, [0.0, 0.0, 0.25]),
            }],
            seed: 7,
            bounds_min: [-3.0, -3.0, -0.5],
            bounds_max: [3.0, 3.0, 2.0],
        }
    }

    fn orbit_spec(n_frames: u64) -> TrajectorySpec {
        TrajectorySpec {
            kind: TrajectoryKind::Orbit { radius: 3.0, height: 2.5 },
            n_frames,
            intrinsics: test_intrinsics(),
        }
    }

    #[test]
    fn orbit_spaces_frames_evenly_and_centers_the_scene() {
        let scene = one_cube_scene();
        let frames = generate_trajectory(&orbit_spec(4), &scene).unwrap();
        assert_eq!(frames.len(), 4);
        let target = scene.centroid();
        for (i, f) in frames.iter().enumerate() {
            assert_eq!(f.frame_id, i as u64 + 1);
            // Eye stays on the orbit circle at the configured height.
            let eye = f.center();
            assert_abs_diff_eq!((eye.xy() - target.xy()).norm(), 3.0, epsilon = 1e-12);
            assert_abs_diff_eq!(eye.z, 2.5, epsilon = 1e-12);
            // The centroid lands at the principal point.
            let px = project_point(f, &target).unwrap();
            assert!((px - Vector2::new(320.0, 240.0)).norm() < 10.0);
        }
        // 90 degree spacing: consecutive eyes subtend right angles.
        let e: Vec<Vector3<f64>> = frames.iter().map(|f| f.center() - target).collect();
        for i in 0..4 {
            let a = e[i].xy();
            let b = e[(i + 1) % 4].xy();
            assert_abs_diff_eq!(a.dot(&b), 0.0, epsilon = 1e-9);
        }
    }

    #[test]
    fn trajectories_are_deterministic_and_linear_hits_endpoints() {
        let scene = one_cube_scene();
        let f1 = generate_trajectory(&orbit_spec(7), &scene).unwrap();
        let f2 = generate_trajectory(&orbit_spec(7), &scene).unwrap();
        for (a, b) in f1.iter().zip(&f2) {
            assert_eq!(a.pose, b.pose);
        }

        let lin = TrajectorySpec {
            kind: TrajectoryKind::Linear { start: [3.0, 0.0, 1.0], end: [0.0, 3.0, 2.0] },
            n_frames: 3,
            intrinsics: test_intrinsics(),
        };
        let frames = generate_trajectory(&lin, &scene).unwrap();
        assert_abs_diff_eq!(frames[0].center(), Vector3::new(3.0, 0.0, 1.0), epsilon = 1e-12);
        assert_abs_diff_eq!(frames[2].center(), Vector3::new(0.0, 3.0, 2.0), epsilon = 1e-12);

        let single = generate_trajectory(&orbit_spec(1), &scene).unwrap();
        assert_eq!(single.len(), 1);
    }

    #[test]
    fn trajectory_validation_rejects_bad_specs() {
        let scene = one_cube_scene();
        let mut spec = orbit_spec(0);
        assert!(matches!(
            generate_trajectory(&spec, &scene),
            Err(SimError::BadTrajectory { .. })
        ));
        spec = orbit_spec(4);
        spec.kind = TrajectoryKind::Orbit { radius: -1.0, height: 2.0 };
        assert!(generate_trajectory(&spec, &scene).is_err());
        spec.kind = TrajectoryKind::Waypoints { eyes: vec![] };
        assert!(generate_trajectory(&spec, &scene).is_err());
        // Eye exactly on the target is degenerate.
        spec.kind = TrajectoryKind::Waypoints { eyes: vec![[0.0, 0.0, 0.25]] };
        assert!(generate_trajectory(&spec, &scene).is_err());
    }

    #[test]
    fn scene_validation_enforces_bounds() {
        let mut scene = one_cube_scene();
        assert!(scene.validate().is_ok());
        scene.bounds_max = [0.2, 3.0, 2.0];
        assert!(matches!(scene.validate(), Err(SimError::BadScene { .. })));
        scene = one_cube_scene();
        scene.bounds_min = [3.0, -3.0, 0.0];
        assert!(scene.validate().is_err());
    }

    #[test]
    fn noiseless_cube_round_trips_exactly() {
        let scene = one_cube_scene();
        let frame = generate_trajectory(&orbit_spec(4), &scene).unwrap().remove(0);
        let noise = NoiseSpec::none();
        let detailed = observe_frame_detailed(&scene, &frame, &noise);
        assert_eq!(detailed.len(), 1);
        let d = &detailed[0];
        let obs = &d.observation;

        // All points sit exactly on the body.
        for p in &obs.points_world {
            let f = scene.objects[0].body.inside_outside(p);
            assert!((f - 1.0).abs() < 1e-9, "noiseless point off the surface: F = {f}");
        }
        assert!(d.outlier_mask.iter().all(|&m| !m));

        // The box equals the tight projection of the emitted points.
        let mut lo = Vector2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = -lo;
        for p in &obs.points_world {
            let px = project_point(&frame, p).unwrap();
            lo = lo.inf(&px);
            hi = hi.sup(&px);
        }
        assert_abs_diff_eq!(obs.bbox.xmin, lo.x, epsilon = 1e-9);
        assert_abs_diff_eq!(obs.bbox.ymin, lo.y, epsilon = 1e-9);
        assert_abs_diff_eq!(obs.bbox.xmax, hi.x, epsilon = 1e-9);
        assert_abs_diff_eq!(obs.bbox.ymax, hi.y, epsilon = 1e-9);
        // Near-cuboid body carries segments.
        assert!(!obs.segments.is_empty());
    }

    #[test]
    fn outliers_are_counted_labeled_and_off_body() {
        let scene = one_cube_scene();
        let frame = generate_trajectory(&orbit_spec(4), &scene).unwrap().remove(0);
        let mut noise = NoiseSpec::none();
        noise.outlier_fraction = 0.1;
        noise.outlier_radius = 2.0;
        let detailed = observe_frame_detailed(&scene, &frame, &noise);
        let d = &detailed[0];

        let n_in = d.outlier_mask.iter().filter(|&&m| !m).count();
        let n_out = d.outlier_mask.iter().filter(|&&m| m).count();
        assert_eq!(n_out, (0.1 * n_in as f64).round() as usize);
        assert!(n_out > 0, "need a nontrivial inlier count for this test");

        for (p, &is_outlier) in d.observation.points_world.iter().zip(&d.outlier_mask) {
            let f = scene.objects[0].body.inside_outside(p);
            if is_outlier {
                assert!(f > 1.0, "outlier inside the body: F = {f}");
            }
            // Every emitted point reprojects inside the pre-noise tight box.
            let px = project_point(&frame, p).unwrap();
            assert!(d.tight_bbox.contains(&px));
        }
    }

    #[test]
    fn every_emitted_point_projects_inside_the_tight_box_under_noise() {
        let scene = one_cube_scene();
        let frames = generate_trajectory(&orbit_spec(6), &scene).unwrap();
        let noise = NoiseSpec::default();
        for frame in &frames {
            for d in observe_frame_detailed(&scene, frame, &noise) {
                for p in &d.observation.points_world {
                    let px = project_point(frame, p).expect("emitted points are in front");
                    assert!(d.tight_bbox.contains(&px));
                }
            }
        }
    }

    #[test]
    fn dropout_of_one_silences_every_observation() {
        let scene = one_cube_scene();
        let frame = generate_trajectory(&orbit_spec(4), &scene).unwrap().remove(0);
        let mut noise = NoiseSpec::default();
        noise.detection_dropout = 1.0;
        assert!(observe_frame(&scene, &frame, &noise).is_empty());
    }

    #[test]
    fn smooth_bodies_emit_no_segments() {
        let mut scene = one_cube_scene();
        scene.objects[0].body = body(0.4, 0.3, 0.25, 1.0, 1.0, 0.3, [0.0, 0.0, 0.25]);
        let frame = generate_trajectory(&orbit_spec(4), &scene).unwrap().remove(0);
        let obs = observe_frame(&scene, &frame, &NoiseSpec::none());
        assert_eq!(obs.len(), 1);
        assert!(obs[0].segments.is_empty());
    }

    #[test]
    fn observation_streams_depend_only_on_seed_and_frame() {
        let scene = one_cube_scene();
        let frames = generate_trajectory(&orbit_spec(6), &scene).unwrap();
        let noise = NoiseSpec::default();
        // Observing frame 5 alone matches observing it after other frames.
        let alone = observe_frame(&scene, &frames[4], &noise);
        for f in &frames[..4] {
            let _ = observe_frame(&scene, f, &noise);
        }
        let again = observe_frame(&scene, &frames[4], &noise);
        assert_eq!(alone.len(), again.len());
        for (a, b) in alone.iter().zip(&again) {
            assert_eq!(a.points_world, b.points_world);
            assert_eq!(a.bbox, b.bbox);
        }
        // Different frames draw differently.
        let other = observe_frame(&scene, &frames[1], &noise);
        if let (Some(a), Some(b)) = (alone.first(), other.first()) {
            assert_ne!(a.points_world, b.points_world);
        }
    }

    #[test]
    fn run_scenario_on_an_empty_scene_yields_an_empty_map() {
        let scenario = Scenario {
            format_version: SCENARIO_FORMAT_VERSION,
            scene: SceneSpec {
                objects: vec![],
                seed: 1,
                bounds_min: [-1.0, -1.0, -1.0],
                bounds_max: [1.0, 1.0, 1.0],
            },
            noise: NoiseSpec::none(),
            trajectory: orbit_spec(3),
        };
        let cfg = PipelineConfig::default();
        let outcome = run_scenario(&scenario, &cfg, 1000, 9).unwrap();
        assert!(outcome.map.is_empty());
        assert_eq!(outcome.eval.truth_count, 0);
        assert_eq!(outcome.eval.mean_iou, 0.0);
        assert_eq!(outcome.frame_reports.len(), 3);
    }

    fn two_object_scenario() -> Scenario {
        Scenario {
            format_version: SCENARIO_FORMAT_VERSION,
            scene: SceneSpec {
                objects: vec![
                    SceneObject {
                        class_label: 1,
                        body: body(0.4, 0.3, 0.25, 0.1, 0.1, 0.3, [-1.5, 0.0, 0.25]),
                    },
                    SceneObject {
                        class_label: 2,
                        body: body(0.35, 0.3, 0.3, 1.0, 1.0, 0.0, [1.5, 0.0, 0.3]),
                    },
                ],
                seed: 11,
                bounds_min: [-4.0, -4.0, -0.5],
                bounds_max: [4.0, 4.0, 2.5],
            },
            noise: NoiseSpec {
                point_sigma: 0.005,
                bbox_sigma: 0.5,
                segment_angle_sigma: 1.0,
                outlier_fraction: 0.1,
                outlier_radius: 1.5,
                detection_dropout: 0.0,
            },
            trajectory: TrajectorySpec {
                kind: TrajectoryKind::Orbit { radius: 4.0, height: 3.5 },
                n_frames: 40,
                intrinsics: test_intrinsics(),
            },
        }
    }

    #[test]
    fn run_scenario_recovers_two_separated_objects() {
        let scenario = two_object_scenario();
        let cfg = PipelineConfig::default();
        let outcome = run_scenario(&scenario, &cfg, 100_000, 3).unwrap();
        assert_eq!(outcome.map.len(), 2, "one landmark per object");
        assert_eq!(outcome.eval.matches.len(), 2);
        assert!(
            outcome.eval.mean_iou > 0.5,
            "mean IoU too low: {}",
            outcome.eval.mean_iou
        );

        // Rerunning reproduces the exact same map.
        let again = run_scenario(&scenario, &cfg, 100_000, 3).unwrap();
        assert_eq!(
            crate::mapper::map_to_json(&outcome.map),
            crate::mapper::map_to_json(&again.map)
        );
        assert_eq!(outcome.eval.mean_iou, again.eval.mean_iou);
    }

    #[test]
    fn scenario_json_round_trips() {
        let scenario = benchmark_scenario();
        scenario.validate().unwrap();
        let json = serde_json::to_string_pretty(&scenario).unwrap();
        let parsed: Scenario = serde_json::from_str(&json).unwrap();
        assert_eq!(parsed, scenario);
        let json2 = serde_json::to_string_pretty(&parsed).unwrap();
        assert_eq!(json, json2);

        // The trajectory kind is tagged in the JSON.
        assert!(json.contains("\"kind\": \"orbit\""));
        let bad = json.replace("\"kind\": \"orbit\"", "\"kind\": \"spiral\"");
        assert!(serde_json::from_str::<Scenario>(&bad).is_err());
    }

    #[test]
    fn benchmark_scene_is_well_formed() {
        let s = benchmark_scenario();
        s.validate().unwrap();
        assert_eq!(s.scene.objects.len(), 5);
        assert_eq!(s.trajectory.n_frames, 200);
        // Two near-cuboids share a class; the rest are distinct.
        assert_eq!(s.scene.objects[0].class_label, s.scene.objects[1].class_label);
        // At least one smooth body forces the planar-direction yaw path.
        assert!(s
            .scene
            .objects
            .iter()
            .any(|o| o.body.shape.eps1() > SEGMENT_EPS_MAX));
    }

    #[test]
    fn noise_validation_rejects_out_of_range_values() {
        let mut n = NoiseSpec::default();
        n.outlier_fraction = 0.6;
        assert!(n.validate().is_err());
        n = NoiseSpec::default();
        n.detection_dropout = -0.1;
        assert!(n.validate().is_err());
        n = NoiseSpec::default();
        n.point_sigma = f64::NAN;
        assert!(n.validate().is_err());
        n = NoiseSpec::default();
        n.outlier_radius = 0.0;
        assert!(n.validate().is_err());
        assert!(NoiseSpec::default().validate().is_ok());
    }
}
