//! Object-level mapping with superquadric models.
//!
//! The crate reconstructs pose, size, and shape of multiple rigid objects from
//! sparse, noisy surface points and 2D detections, and ships a deterministic
//! synthetic-scene simulator plus volumetric-IoU evaluation used to benchmark
//! the pipeline end to end.

pub mod assoc;
pub mod camera;
pub mod mapper;
pub mod outlier;
pub mod pose;
pub mod shape_fit;
pub mod sim;
pub mod stats;
pub mod superquadric;

pub use camera::{
    line_angle_diff, project_point, project_segment, read_trajectory, signed_line_angle_diff,
    write_trajectory, BBox, CameraError, CameraFrame, Intrinsics, Segment2D,
};
pub use superquadric::{
    iou_3d, wrap_angle, write_ply, GeometryError, ObjectPose, ShapeParams, SizeParams,
    Superquadric, SurfacePoint, IOU_MIN_SAMPLES,
};
