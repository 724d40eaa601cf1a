//! Superellipsoid geometry: parametric surface, inside-outside classification,
//! radial distance, surface sampling, Monte-Carlo volume overlap, and mesh export.
//!
//! A body is described by three semi-axes `(ax, ay, az)`, two shape exponents
//! `(eps1, eps2)` controlling roundness (1 = ellipsoid, towards 0 = box-like),
//! and a yaw-only pose in the world frame. All per-point operations accept
//! world-frame points and handle the pose transform internally.

use std::fmt;
use std::io::{self, Write};

use nalgebra::{Rotation3, Vector3};
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::de::Error as _;
use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Shape exponents are kept inside this range for numerical stability;
/// constructors clamp, nothing clamps mid-pipeline.
pub const EPS_MIN: f64 = 0.1;
/// Upper stability bound for shape exponents.
pub const EPS_MAX: f64 = 1.9;

/// Errors produced by geometry constructors and sampling.
#[derive(Debug, Clone, PartialEq)]
pub enum GeometryError {
    /// A semi-axis was zero, negative, or not finite.
    InvalidSize { ax: f64, ay: f64, az: f64 },
    /// A parameter that must be finite was NaN or infinite.
    NonFinite(&'static str),
    /// Surface sampling needs at least a 2 x 3 grid.
    GridTooSmall { n_eta: usize, n_omega: usize },
}

impl fmt::Display for GeometryError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            GeometryError::InvalidSize { ax, ay, az } => {
                write!(f, "semi-axes must be positive and finite, got ({ax}, {ay}, {az})")
            }
            GeometryError::NonFinite(what) => write!(f, "{what} must be finite"),
            GeometryError::GridTooSmall { n_eta, n_omega } => {
                write!(f, "surface grid must be at least 2 x 3, got {n_eta} x {n_omega}")
            }
        }
    }
}

impl std::error::Error for GeometryError {}

/// Roundness exponents `(eps1, eps2)`, clamped to `[EPS_MIN, EPS_MAX]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ShapeParams {
    eps1: f64,
    eps2: f64,
}

impl ShapeParams {
    /// Builds shape exponents, clamping each into the stability range.
    pub fn new(eps1: f64, eps2: f64) -> Result<Self, GeometryError> {
        if !eps1.is_finite() || !eps2.is_finite() {
            return Err(GeometryError::NonFinite("shape exponent"));
        }
        Ok(ShapeParams {
            eps1: eps1.clamp(EPS_MIN, EPS_MAX),
            eps2: eps2.clamp(EPS_MIN, EPS_MAX),
        })
    }

    /// North-south roundness exponent.
    pub fn eps1(&self) -> f64 {
        self.eps1
    }

    /// East-west roundness exponent.
    pub fn eps2(&self) -> f64 {
        self.eps2
    }
}

/// Positive semi-axes `(ax, ay, az)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizeParams {
    ax: f64,
    ay: f64,
    az: f64,
}

impl SizeParams {
    /// Builds semi-axes; all three must be positive and finite.
    pub fn new(ax: f64, ay: f64, az: f64) -> Result<Self, GeometryError> {
        let ok = ax.is_finite() && ay.is_finite() && az.is_finite() && ax > 0.0 && ay > 0.0 && az > 0.0;
        if !ok {
            return Err(GeometryError::InvalidSize { ax, ay, az });
        }
        Ok(SizeParams { ax, ay, az })
    }

    pub fn ax(&self) -> f64 {
        self.ax
    }

    pub fn ay(&self) -> f64 {
        self.ay
    }

    pub fn az(&self) -> f64 {
        self.az
    }

    /// Smallest of the three semi-axes.
    pub fn min_axis(&self) -> f64 {
        self.ax.min(self.ay).min(self.az)
    }
}

/// World pose restricted to a yaw rotation about world Z plus a translation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ObjectPose {
    yaw: f64,
    translation: Vector3<f64>,
}

/// Wraps an angle into `(-pi, pi]`.
pub fn wrap_angle(angle: f64) -> f64 {
    let w = angle.rem_euclid(std::f64::consts::TAU);
    if w > std::f64::consts::PI {
        w - std::f64::consts::TAU
    } else {
        w
    }
}

impl ObjectPose {
    /// Builds a pose; yaw is wrapped into `(-pi, pi]`.
    pub fn new(yaw: f64, translation: Vector3<f64>) -> Result<Self, GeometryError> {
        if !yaw.is_finite() {
            return Err(GeometryError::NonFinite("yaw"));
        }
        if !(translation.x.is_finite() && translation.y.is_finite() && translation.z.is_finite()) {
            return Err(GeometryError::NonFinite("translation"));
        }
        Ok(ObjectPose { yaw: wrap_angle(yaw), translation })
    }

    /// Identity pose at the world origin.
    pub fn identity() -> Self {
        ObjectPose { yaw: 0.0, translation: Vector3::zeros() }
    }

    pub fn yaw(&self) -> f64 {
        self.yaw
    }

    pub fn translation(&self) -> Vector3<f64> {
        self.translation
    }

    /// World-frame rotation of the object axes.
    pub fn rotation(&self) -> Rotation3<f64> {
        Rotation3::from_axis_angle(&Vector3::z_axis(), self.yaw)
    }

    /// Maps a world point into the object frame.
    pub fn world_to_object(&self, p_world: &Vector3<f64>) -> Vector3<f64> {
        self.rotation().inverse() * (p_world - self.translation)
    }

    /// Maps an object-frame point into the world frame.
    pub fn object_to_world(&self, p_object: &Vector3<f64>) -> Vector3<f64> {
        self.rotation() * p_object + self.translation
    }
}

/// A superellipsoid with size, shape, and world pose.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Superquadric {
    pub size: SizeParams,
    pub shape: ShapeParams,
    pub pose: ObjectPose,
}

/// One sampled surface location with its parameter pair.
#[derive(Debug, Clone, Copy)]
pub struct SurfacePoint {
    pub eta: f64,
    pub omega: f64,
    /// World-frame position.
    pub position: Vector3<f64>,
}

/// Signed power `sign(c) * |c|^e`, defined on all octants.
fn signed_pow(c: f64, e: f64) -> f64 {
    if c == 0.0 {
        0.0
    } else {
        c.signum() * c.abs().powf(e)
    }
}

impl Superquadric {
    /// Convenience constructor from raw parameters.
    pub fn new(size: SizeParams, shape: ShapeParams, pose: ObjectPose) -> Self {
        Superquadric { size, shape, pose }
    }

    /// Surface point for parameters `eta in [-pi/2, pi/2]`, `omega in [-pi, pi]`,
    /// in the object frame. Signed powers keep all octants covered.
    pub fn parametric_point(&self, eta: f64, omega: f64) -> Vector3<f64> {
        let e1 = self.shape.eps1;
        let e2 = self.shape.eps2;
        let ce = signed_pow(eta.cos(), e1);
        let se = signed_pow(eta.sin(), e1);
        Vector3::new(
            self.size.ax * ce * signed_pow(omega.cos(), e2),
            self.size.ay * ce * signed_pow(omega.sin(), e2),
            self.size.az * se,
        )
    }

    /// Inside-outside value for a world point: < 1 inside, 1 on the surface,
    /// > 1 outside. Bases use absolute values so the function is defined
    /// everywhere; with `eps1 = eps2 = 1` it degenerates to the ellipsoid
    /// quadratic form.
    pub fn inside_outside(&self, p_world: &Vector3<f64>) -> f64 {
        let q = self.pose.world_to_object(p_world);
        let e1 = self.shape.eps1;
        let e2 = self.shape.eps2;
        let xa = (q.x / self.size.ax).abs();
        let ya = (q.y / self.size.ay).abs();
        let za = (q.z / self.size.az).abs();
        let lateral = xa.powf(2.0 / e2) + ya.powf(2.0 / e2);
        lateral.powf(e2 / e1) + za.powf(2.0 / e1)
    }

    /// Euclidean distance from a world point to the surface along the ray
    /// through the body center: `||p|| * |1 - F(p)^(-eps1/2)|`. At the center
    /// the nearest-surface distance degenerates to the smallest semi-axis.
    pub fn radial_distance(&self, p_world: &Vector3<f64>) -> f64 {
        let q = self.pose.world_to_object(p_world);
        let r = q.norm();
        if r < 1e-12 {
            return self.size.min_axis();
        }
        let f = self.inside_outside(p_world);
        r * (1.0 - f.powf(-self.shape.eps1 / 2.0)).abs()
    }

    /// Axis-aligned world bounds. The body always fits the box spanned by its
    /// semi-axes in the object frame, so the yaw-rotated box bounds are exact
    /// outer bounds.
    pub fn aabb(&self) -> (Vector3<f64>, Vector3<f64>) {
        let (s, c) = self.pose.yaw.sin_cos();
        let hx = c.abs() * self.size.ax + s.abs() * self.size.ay;
        let hy = s.abs() * self.size.ax + c.abs() * self.size.ay;
        let hz = self.size.az;
        let h = Vector3::new(hx, hy, hz);
        (self.pose.translation - h, self.pose.translation + h)
    }

    /// Samples the surface on a uniform `n_eta x n_omega` parameter grid.
    /// Rows run pole to pole; columns wrap around the equator without
    /// duplicating the seam. Needs at least a 2 x 3 grid.
    pub fn sample_surface(&self, n_eta: usize, n_omega: usize) -> Result<Vec<SurfacePoint>, GeometryError> {
        if n_eta < 2 || n_omega < 3 {
            return Err(GeometryError::GridTooSmall { n_eta, n_omega });
        }
        let mut out = Vec::with_capacity(n_eta * n_omega);
        for i in 0..n_eta {
            let eta = -std::f64::consts::FRAC_PI_2
                + std::f64::consts::PI * (i as f64) / ((n_eta - 1) as f64);
            for j in 0..n_omega {
                let omega = -std::f64::consts::PI
                    + std::f64::consts::TAU * (j as f64) / (n_omega as f64);
                let position = self.pose.object_to_world(&self.parametric_point(eta, omega));
                out.push(SurfacePoint { eta, omega, position });
            }
        }
        Ok(out)
    }

    /// Outward world-frame surface normal at `(eta, omega)`, from central
    /// differences of the parametric map. Near the poles the tangent basis
    /// collapses; there the normal is the exact pole normal `(0, 0, +/-1)`.
    pub fn surface_normal(&self, eta: f64, omega: f64) -> Vector3<f64> {
        let h = 1e-5;
        let du = (self.parametric_point(eta + h, omega) - self.parametric_point(eta - h, omega)) / (2.0 * h);
        let dv = (self.parametric_point(eta, omega + h) - self.parametric_point(eta, omega - h)) / (2.0 * h);
        let mut n = du.cross(&dv);
        let norm = n.norm();
        if norm < 1e-9 {
            n = Vector3::new(0.0, 0.0, eta.signum());
        } else {
            n /= norm;
            // Central differences can flip orientation depending on the
            // parameter quadrant; force the normal outward.
            let p = self.parametric_point(eta, omega);
            if n.dot(&p) < 0.0 {
                n = -n;
            }
        }
        self.pose.rotation() * n
    }

    /// Total volume estimate from the same sampling scheme as `iou_3d`;
    /// mostly useful for diagnostics.
    pub fn volume_monte_carlo(&self, n_samples: usize, seed: u64) -> f64 {
        let (lo, hi) = self.aabb();
        let ext = hi - lo;
        let box_volume = ext.x * ext.y * ext.z;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut hits = 0usize;
        for _ in 0..n_samples {
            let p = Vector3::new(
                rng.random_range(lo.x..hi.x),
                rng.random_range(lo.y..hi.y),
                rng.random_range(lo.z..hi.z),
            );
            if self.inside_outside(&p) <= 1.0 {
                hits += 1;
            }
        }
        box_volume * hits as f64 / n_samples as f64
    }
}

/// Fewest samples [`iou_3d`] accepts; below this the estimate is too noisy
/// to act on.
pub const IOU_MIN_SAMPLES: usize = 10_000;

/// Volumetric intersection-over-union of two bodies, estimated by uniform
/// sampling of the union of their world bounding boxes. Deterministic for a
/// fixed seed, and exactly symmetric in its arguments.
///
/// `n_samples` below [`IOU_MIN_SAMPLES`] is rejected by assertion.
pub fn iou_3d(a: &Superquadric, b: &Superquadric, n_samples: usize, seed: u64) -> f64 {
    assert!(n_samples >= IOU_MIN_SAMPLES, "iou_3d needs at least {IOU_MIN_SAMPLES} samples");
    let (alo, ahi) = a.aabb();
    let (blo, bhi) = b.aabb();
    let lo = alo.inf(&blo);
    let hi = ahi.sup(&bhi);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut n_inter = 0usize;
    let mut n_union = 0usize;
    for _ in 0..n_samples {
        let p = Vector3::new(
            rng.random_range(lo.x..hi.x),
            rng.random_range(lo.y..hi.y),
            rng.random_range(lo.z..hi.z),
        );
        let in_a = a.inside_outside(&p) <= 1.0;
        let in_b = b.inside_outside(&p) <= 1.0;
        if in_a && in_b {
            n_inter += 1;
        }
        if in_a || in_b {
            n_union += 1;
        }
    }
    if n_union == 0 {
        0.0
    } else {
        n_inter as f64 / n_union as f64
    }
}

/// Writes the body as an ASCII PLY triangle mesh sampled on an
/// `n_eta x n_omega` parameter grid (world-frame vertices).
pub fn write_ply(
    sq: &Superquadric,
    n_eta: usize,
    n_omega: usize,
    out: &mut dyn Write,
) -> io::Result<()> {
    let points = sq
        .sample_surface(n_eta, n_omega)
        .map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e.to_string()))?;
    let n_faces = 2 * (n_eta - 1) * n_omega;
    writeln!(out, "ply")?;
    writeln!(out, "format ascii 1.0")?;
    writeln!(out, "comment format_version 1")?;
    writeln!(out, "element vertex {}", points.len())?;
    writeln!(out, "property float x")?;
    writeln!(out, "property float y")?;
    writeln!(out, "property float z")?;
    writeln!(out, "element face {n_faces}")?;
    writeln!(out, "property list uchar int vertex_indices")?;
    writeln!(out, "end_header")?;
    for p in &points {
        writeln!(out, "{} {} {}", p.position.x, p.position.y, p.position.z)?;
    }
    for i in 0..n_eta - 1 {
        for j in 0..n_omega {
            let j1 = (j + 1) % n_omega;
            let v00 = i * n_omega + j;
            let v10 = (i + 1) * n_omega + j;
            let v11 = (i + 1) * n_omega + j1;
            let v01 = i * n_omega + j1;
            writeln!(out, "3 {v00} {v10} {v11}")?;
            writeln!(out, "3 {v00} {v11} {v01}")?;
        }
    }
    Ok(())
}

/// Flat JSON encoding: `{ax, ay, az, eps1, eps2, yaw, t: [x, y, z]}`.
#[derive(Serialize, Deserialize)]
struct SuperquadricRecord {
    ax: f64,
    ay: f64,
    az: f64,
    eps1: f64,
    eps2: f64,
    yaw: f64,
    t: [f64; 3],
}

impl Serialize for Superquadric {
    fn serialize<S: Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        let t = self.pose.translation();
        SuperquadricRecord {
            ax: self.size.ax,
            ay: self.size.ay,
            az: self.size.az,
            eps1: self.shape.eps1,
            eps2: self.shape.eps2,
            yaw: self.pose.yaw,
            t: [t.x, t.y, t.z],
        }
        .serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for Superquadric {
    fn deserialize<D: Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let r = SuperquadricRecord::deserialize(deserializer)?;
        let size = SizeParams::new(r.ax, r.ay, r.az).map_err(D::Error::custom)?;
        let shape = ShapeParams::new(r.eps1, r.eps2).map_err(D::Error::custom)?;
        let pose = ObjectPose::new(r.yaw, Vector3::new(r.t[0], r.t[1], r.t[2]))
            .map_err(D::Error::custom)?;
        Ok(Superquadric { size, shape, pose })
    }
}
