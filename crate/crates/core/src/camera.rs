//! Pinhole camera model: intrinsics, posed frames, point/segment projection,
//! detection boxes, and a JSON-lines trajectory format.
//!
//! Camera frames use the usual computer-vision convention: +Z looks forward,
//! +X right, +Y down in the image. Poses are camera-to-world.

use std::fmt;
use std::io::{BufRead, Write};

use nalgebra::{Isometry3, Matrix3, Rotation3, Translation3, UnitQuaternion, Vector2, Vector3};
use serde::{Deserialize, Serialize};

/// Camera-frame depth below which a point counts as behind the camera.
pub const MIN_DEPTH: f64 = 1e-6;
/// Projected segments shorter than this many pixels carry no usable direction.
pub const MIN_SEGMENT_PX: f64 = 2.0;
/// Allowed deviation from orthonormality when loading rotations from disk.
pub const ROTATION_TOL: f64 = 1e-9;

/// Errors from camera construction and trajectory files.
#[derive(Debug)]
pub enum CameraError {
    /// Focal lengths must be positive and the principal point inside the image.
    InvalidIntrinsics(String),
    /// A rotation read from disk was not orthonormal within `ROTATION_TOL`.
    NonOrthonormalRotation { deviation: f64 },
    /// A degenerate 2D box (empty or inverted).
    InvalidBBox { xmin: f64, ymin: f64, xmax: f64, ymax: f64 },
    /// A 2D segment with coincident endpoints.
    DegenerateSegment,
    /// A malformed trajectory record.
    BadRecord { line: usize, message: String },
    /// Underlying I/O failure.
    Io(std::io::Error),
}

impl fmt::Display for CameraError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CameraError::InvalidIntrinsics(msg) => write!(f, "invalid intrinsics: {msg}"),
            CameraError::NonOrthonormalRotation { deviation } => {
                write!(f, "rotation is not orthonormal (deviation {deviation:.3e})")
            }
            CameraError::InvalidBBox { xmin, ymin, xmax, ymax } => {
                write!(f, "invalid bounding box [{xmin}, {ymin}, {xmax}, {ymax}]")
            }
            CameraError::DegenerateSegment => write!(f, "segment endpoints coincide"),
            CameraError::BadRecord { line, message } => {
                write!(f, "trajectory record on line {line}: {message}")
            }
            CameraError::Io(e) => write!(f, "trajectory i/o: {e}"),
        }
    }
}

impl std::error::Error for CameraError {}

impl From<std::io::Error> for CameraError {
    fn from(e: std::io::Error) -> Self {
        CameraError::Io(e)
    }
}

/// Pinhole intrinsics plus image size in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Intrinsics {
    pub fx: f64,
    pub fy: f64,
    pub cx: f64,
    pub cy: f64,
    pub width: u32,
    pub height: u32,
}

impl Intrinsics {
    /// Validates focal lengths and principal-point placement.
    pub fn new(fx: f64, fy: f64, cx: f64, cy: f64, width: u32, height: u32) -> Result<Self, CameraError> {
        if !(fx.is_finite() && fy.is_finite() && fx > 0.0 && fy > 0.0) {
            return Err(CameraError::InvalidIntrinsics(format!("focal lengths ({fx}, {fy})")));
        }
        if width == 0 || height == 0 {
            return Err(CameraError::InvalidIntrinsics(format!("image size {width}x{height}")));
        }
        if !(cx > 0.0 && cx < width as f64 && cy > 0.0 && cy < height as f64) {
            return Err(CameraError::InvalidIntrinsics(format!(
                "principal point ({cx}, {cy}) outside {width}x{height}"
            )));
        }
        Ok(Intrinsics { fx, fy, cx, cy, width, height })
    }
}

/// One posed camera: frame id, camera-to-world pose, and intrinsics.
#[derive(Debug, Clone, PartialEq)]
pub struct CameraFrame {
    pub frame_id: u64,
    pub pose: Isometry3<f64>,
    pub intrinsics: Intrinsics,
}

impl CameraFrame {
    /// Builds a frame from a rotation matrix and translation, validating
    /// orthonormality within `ROTATION_TOL`.
    pub fn from_matrix(
        frame_id: u64,
        rotation: Matrix3<f64>,
        translation: Vector3<f64>,
        intrinsics: Intrinsics,
    ) -> Result<Self, CameraError> {
        let dev = (rotation.transpose() * rotation - Matrix3::identity()).abs().max();
        if dev > ROTATION_TOL || rotation.determinant() < 0.0 {
            return Err(CameraError::NonOrthonormalRotation { deviation: dev });
        }
        let rot = Rotation3::from_matrix_unchecked(rotation);
        let pose = Isometry3::from_parts(
            Translation3::from(translation),
            UnitQuaternion::from_rotation_matrix(&rot),
        );
        Ok(CameraFrame { frame_id, pose, intrinsics })
    }

    /// Camera positioned at `eye` looking at `target`, world +Z up. Falls back
    /// to +Y as the up hint when the view direction is vertical.
    pub fn look_at(frame_id: u64, eye: Vector3<f64>, target: Vector3<f64>, intrinsics: Intrinsics) -> Self {
        let forward = (target - eye).normalize();
        let mut up = Vector3::z();
        if forward.cross(&up).norm() < 1e-9 {
            up = Vector3::y();
        }
        let x = forward.cross(&up).normalize();
        let y = forward.cross(&x).normalize();
        let rot = Rotation3::from_matrix_unchecked(Matrix3::from_columns(&[x, y, forward]));
        let pose = Isometry3::from_parts(
            Translation3::from(eye),
            UnitQuaternion::from_rotation_matrix(&rot),
        );
        CameraFrame { frame_id, pose, intrinsics }
    }

    /// World point into camera coordinates.
    pub fn world_to_camera(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.pose.inverse_transform_point(&(*p_world).into()).coords
    }

    /// Camera center in world coordinates.
    pub fn center(&self) -> Vector3<f64> {
        self.pose.translation.vector
    }
}

/// Projects a world point to pixel coordinates; `None` when the point sits at
/// or behind the image plane (camera-frame depth <= `MIN_DEPTH`). Pixels
/// outside the image bounds are still returned.
pub fn project_point(frame: &CameraFrame, p_world: &Vector3<f64>) -> Option<Vector2<f64>> {
    let pc = frame.world_to_camera(p_world);
    if pc.z <= MIN_DEPTH {
        return None;
    }
    let k = &frame.intrinsics;
    Some(Vector2::new(k.fx * pc.x / pc.z + k.cx, k.fy * pc.y / pc.z + k.cy))
}

/// Projects a world segment. Rejected when either endpoint is behind the
/// camera or the projection is shorter than `MIN_SEGMENT_PX`.
pub fn project_segment(
    frame: &CameraFrame,
    a_world: &Vector3<f64>,
    b_world: &Vector3<f64>,
) -> Option<Segment2D> {
    let a = project_point(frame, a_world)?;
    let b = project_point(frame, b_world)?;
    if (b - a).norm() < MIN_SEGMENT_PX {
        return None;
    }
    Segment2D::new(a, b).ok()
}

/// Axis-aligned 2D detection box in pixels.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BBox {
    pub xmin: f64,
    pub ymin: f64,
    pub xmax: f64,
    pub ymax: f64,
}

impl BBox {
    /// Builds a box; both extents must be strictly positive and finite.
    pub fn new(xmin: f64, ymin: f64, xmax: f64, ymax: f64) -> Result<Self, CameraError> {
        let finite = xmin.is_finite() && ymin.is_finite() && xmax.is_finite() && ymax.is_finite();
        if !finite || xmin >= xmax || ymin >= ymax {
            return Err(CameraError::InvalidBBox { xmin, ymin, xmax, ymax });
        }
        Ok(BBox { xmin, ymin, xmax, ymax })
    }

    /// Clips the box to an image; `None` when nothing remains.
    pub fn clip(&self, width: u32, height: u32) -> Option<BBox> {
        let xmin = self.xmin.max(0.0);
        let ymin = self.ymin.max(0.0);
        let xmax = self.xmax.min(width as f64);
        let ymax = self.ymax.min(height as f64);
        BBox::new(xmin, ymin, xmax, ymax).ok()
    }

    /// Inclusive containment: points exactly on the boundary count as inside.
    pub fn contains(&self, px: &Vector2<f64>) -> bool {
        px.x >= self.xmin && px.x <= self.xmax && px.y >= self.ymin && px.y <= self.ymax
    }

    pub fn width(&self) -> f64 {
        self.xmax - self.xmin
    }

    pub fn height(&self) -> f64 {
        self.ymax - self.ymin
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn center(&self) -> Vector2<f64> {
        Vector2::new(0.5 * (self.xmin + self.xmax), 0.5 * (self.ymin + self.ymax))
    }
}

/// A 2D line segment with distinct endpoints.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Segment2D {
    pub a: Vector2<f64>,
    pub b: Vector2<f64>,
}

impl Segment2D {
    /// Builds a segment; coincident endpoints are rejected.
    pub fn new(a: Vector2<f64>, b: Vector2<f64>) -> Result<Self, CameraError> {
        if (b - a).norm() < 1e-12 {
            return Err(CameraError::DegenerateSegment);
        }
        Ok(Segment2D { a, b })
    }

    /// Undirected line angle in `[0, pi)`: horizontal is 0, vertical is pi/2.
    pub fn line_angle(&self) -> f64 {
        let d = self.b - self.a;
        let ang = d.y.atan2(d.x).rem_euclid(std::f64::consts::PI);
        if ang >= std::f64::consts::PI {
            0.0
        } else {
            ang
        }
    }

    pub fn midpoint(&self) -> Vector2<f64> {
        0.5 * (self.a + self.b)
    }

    pub fn length(&self) -> f64 {
        (self.b - self.a).norm()
    }
}

/// Absolute difference of two undirected line angles, folded into `[0, pi/2]`.
pub fn line_angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).abs().rem_euclid(std::f64::consts::PI);
    d.min(std::f64::consts::PI - d)
}

/// Signed smallest rotation taking line angle `b` onto `a`, in `(-pi/2, pi/2]`.
pub fn signed_line_angle_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(std::f64::consts::PI);
    if d > std::f64::consts::FRAC_PI_2 {
        d - std::f64::consts::PI
    } else {
        d
    }
}

/// On-disk trajectory record: one camera frame per JSON line.
#[derive(Serialize, Deserialize)]
struct FrameRecord {
    frame_id: u64,
    rotation: [[f64; 3]; 3],
    translation: [f64; 3],
    intrinsics: Intrinsics,
}

/// Writes frames as JSON lines (one frame per line).
pub fn write_trajectory(frames: &[CameraFrame], out: &mut dyn Write) -> Result<(), CameraError> {
    for f in frames {
        let r = f.pose.rotation.to_rotation_matrix();
        let m = r.matrix();
        let rec = FrameRecord {
            frame_id: f.frame_id,
            rotation: [
                [m[(0, 0)], m[(0, 1)], m[(0, 2)]],
                [m[(1, 0)], m[(1, 1)], m[(1, 2)]],
                [m[(2, 0)], m[(2, 1)], m[(2, 2)]],
            ],
            translation: [
                f.pose.translation.vector.x,
                f.pose.translation.vector.y,
                f.pose.translation.vector.z,
            ],
            intrinsics: f.intrinsics,
        };
        let line = serde_json::to_string(&rec)
            .map_err(|e| CameraError::BadRecord { line: 0, message: e.to_string() })?;
        writeln!(out, "{line}")?;
    }
    Ok(())
}

/// Reads a JSON-lines trajectory, validating intrinsics and rotation
/// orthonormality for every record. Blank lines are skipped.
pub fn read_trajectory(input: &mut dyn BufRead) -> Result<Vec<CameraFrame>, CameraError> {
    let mut frames = Vec::new();
    for (idx, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let lineno = idx + 1;
        let rec: FrameRecord = serde_json::from_str(&line)
            .map_err(|e| CameraError::BadRecord { line: lineno, message: e.to_string() })?;
        let k = rec.intrinsics;
        let intrinsics = Intrinsics::new(k.fx, k.fy, k.cx, k.cy, k.width, k.height)
            .map_err(|e| CameraError::BadRecord { line: lineno, message: e.to_string() })?;
        let rot = Matrix3::new(
            rec.rotation[0][0], rec.rotation[0][1], rec.rotation[0][2],
            rec.rotation[1][0], rec.rotation[1][1], rec.rotation[1][2],
            rec.rotation[2][0], rec.rotation[2][1], rec.rotation[2][2],
        );
        let t = Vector3::new(rec.translation[0], rec.translation[1], rec.translation[2]);
        let frame = CameraFrame::from_matrix(rec.frame_id, rot, t, intrinsics)
            .map_err(|e| CameraError::BadRecord { line: lineno, message: e.to_string() })?;
        frames.push(frame);
    }
    Ok(frames)
}
