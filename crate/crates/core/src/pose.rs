//! Object pose estimation from sparse points and detected image line segments.
//!
//! Translation is the centroid of the accumulated cloud. Yaw comes from one of
//! two routes: aligning the projections of the object's axes with detected
//! edge segments (textured, boxy objects), or the principal direction of the
//! cloud's ground-plane projection (smooth objects). Yaw estimates live on a
//! quarter-turn torus — a superellipsoid is unchanged by 90-degree yaw steps
//! combined with swapping the x/y semi-axes — so canonicalization and
//! averaging are built around that symmetry.

use std::fmt;

use nalgebra::{Matrix2, Vector2, Vector3};

use crate::camera::{line_angle_diff, project_segment, signed_line_angle_diff, CameraFrame, Segment2D};
use crate::superquadric::wrap_angle;

/// Line-alignment matching gate: projected axis and detected segment must
/// agree within 5 degrees to pair up.
pub const MATCH_MAX_ANGLE: f64 = 5.0 * std::f64::consts::PI / 180.0;
/// Number of yaw samples used to initialize the line-alignment search.
const INIT_SAMPLES: usize = 18;
/// Half-width of the initialization window around zero yaw.
const INIT_HALF_RANGE: f64 = 45.0 * std::f64::consts::PI / 180.0;
/// Numeric derivative step for the refinement (0.1 degree).
const GN_STEP: f64 = 0.1 * std::f64::consts::PI / 180.0;
/// Refinement stops once the yaw update falls below 0.01 degree.
const GN_TOL: f64 = 0.01 * std::f64::consts::PI / 180.0;
/// Iteration cap for the refinement.
const GN_MAX_ITERS: usize = 20;

/// Errors from pose estimation.
#[derive(Debug, Clone, PartialEq)]
pub enum PoseError {
    /// Centroid of an empty point set.
    EmptyPointSet,
    /// Too few points for a direction estimate.
    TooFewPoints { got: usize },
    /// No detected segment matched any projected axis at any yaw sample.
    NoSegmentMatches,
    /// The cloud has no usable principal direction (flat or isotropic).
    DegenerateDirection,
}

impl fmt::Display for PoseError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PoseError::EmptyPointSet => write!(f, "cannot take the centroid of no points"),
            PoseError::TooFewPoints { got } => write!(f, "need at least 3 points, got {got}"),
            PoseError::NoSegmentMatches => write!(f, "no detected segment matches any projected axis"),
            PoseError::DegenerateDirection => write!(f, "point cloud has no dominant direction"),
        }
    }
}

impl std::error::Error for PoseError {}

/// How a yaw estimate was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum YawMethod {
    /// Image line segments aligned against projected object axes.
    LineAlignment,
    /// Principal direction of the ground-plane projection.
    Pca,
}

/// One yaw estimate with its provenance and quality.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawEstimate {
    /// Estimated yaw in radians, wrapped to (-pi, pi].
    pub yaw: f64,
    pub method: YawMethod,
    /// Number of detected segments supporting the estimate (0 for PCA).
    pub n_matches: usize,
    /// Final sum of squared angle errors (line alignment), or the ratio of
    /// minor to major eigenvalue (PCA; small means strongly directional).
    pub residual: f64,
}

/// Mean of a set of world points.
pub fn centroid(points: &[Vector3<f64>]) -> Result<Vector3<f64>, PoseError> {
    if points.is_empty() {
        return Err(PoseError::EmptyPointSet);
    }
    let sum: Vector3<f64> = points.iter().sum();
    Ok(sum / points.len() as f64)
}

/// Unit-length world segments along the object's x, y, z axes for a yaw
/// hypothesis, rooted at the object center.
pub fn axis_segments(yaw: f64, center: &Vector3<f64>) -> [(Vector3<f64>, Vector3<f64>); 3] {
    let (s, c) = yaw.sin_cos();
    let dirs = [Vector3::new(c, s, 0.0), Vector3::new(-s, c, 0.0), Vector3::new(0.0, 0.0, 1.0)];
    dirs.map(|d| (*center, center + d))
}

/// Greedy one-to-one matching of projected axes to detected segments by
/// ascending line-angle error; pairs beyond `MATCH_MAX_ANGLE` never match.
/// Returns `(axis_index, detected_index)` pairs.
pub fn match_segments(
    projected: &[Option<Segment2D>; 3],
    detected: &[Segment2D],
) -> Vec<(usize, usize)> {
    let mut candidates: Vec<(f64, usize, usize)> = Vec::new();
    for (ai, proj) in projected.iter().enumerate() {
        let Some(seg) = proj else { continue };
        for (di, det) in detected.iter().enumerate() {
            let err = line_angle_diff(seg.line_angle(), det.line_angle());
            if err < MATCH_MAX_ANGLE {
                candidates.push((err, ai, di));
            }
        }
    }
    candidates.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap().then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2)));
    let mut axis_used = [false; 3];
    let mut det_used = vec![false; detected.len()];
    let mut matches = Vec::new();
    for (_, ai, di) in candidates {
        if !axis_used[ai] && !det_used[di] {
            axis_used[ai] = true;
            det_used[di] = true;
            matches.push((ai, di));
        }
    }
    matches
}

fn project_axes(yaw: f64, center: &Vector3<f64>, frame: &CameraFrame) -> [Option<Segment2D>; 3] {
    let segs = axis_segments(yaw, center);
    segs.map(|(a, b)| project_segment(frame, &a, &b))
}

/// Signed angle residuals for a fixed axis/detection pairing at a yaw
/// hypothesis; `None` if a paired axis no longer projects.
fn pairing_residuals(
    yaw: f64,
    center: &Vector3<f64>,
    frame: &CameraFrame,
    detected: &[Segment2D],
    pairs: &[(usize, usize)],
) -> Option<Vec<f64>> {
    let projected = project_axes(yaw, center, frame);
    let mut out = Vec::with_capacity(pairs.len());
    for &(ai, di) in pairs {
        let seg = projected[ai]?;
        out.push(signed_line_angle_diff(seg.line_angle(), detected[di].line_angle()));
    }
    Some(out)
}

fn cost_of(residuals: &[f64]) -> f64 {
    residuals.iter().map(|r| r * r).sum()
}

/// Yaw from detected edge segments: sample 18 yaw hypotheses across
/// [-45 deg, 45 deg], keep the one matching the most segments, then refine it
/// with a damped Gauss-Newton loop over the accumulated squared angle error
/// of the fixed pairing. Fails when no sample matches anything.
pub fn estimate_yaw_lines(
    detected: &[Segment2D],
    center: &Vector3<f64>,
    frame: &CameraFrame,
) -> Result<YawEstimate, PoseError> {
    if detected.is_empty() {
        return Err(PoseError::NoSegmentMatches);
    }
    // Initialization sweep: most matches wins, ties by lower residual, then
    // by smaller |yaw| so the answer is deterministic.
    let mut best: Option<(usize, f64, f64, Vec<(usize, usize)>)> = None;
    for k in 0..INIT_SAMPLES {
        let yaw = -INIT_HALF_RANGE
            + 2.0 * INIT_HALF_RANGE * (k as f64) / ((INIT_SAMPLES - 1) as f64);
        let projected = project_axes(yaw, center, frame);
        let pairs = match_segments(&projected, detected);
        if pairs.is_empty() {
            continue;
        }
        let residuals = pairing_residuals(yaw, center, frame, detected, &pairs)
            .expect("matched axes must project");
        let cost = cost_of(&residuals);
        let better = match &best {
            None => true,
            Some((n, c, y, _)) => {
                pairs.len() > *n
                    || (pairs.len() == *n && cost < *c)
                    || (pairs.len() == *n && cost == *c && yaw.abs() < y.abs())
            }
        };
        if better {
            best = Some((pairs.len(), cost, yaw, pairs));
        }
    }
    let (n_matches, mut cost, mut yaw, pairs) = best.ok_or(PoseError::NoSegmentMatches)?;

    // Damped Gauss-Newton on the single yaw parameter, numeric derivative.
    let mut lambda = 1e-3;
    for _ in 0..GN_MAX_ITERS {
        let r0 = match pairing_residuals(yaw, center, frame, detected, &pairs) {
            Some(r) => r,
            None => break,
        };
        let (rp, rm) = match (
            pairing_residuals(yaw + GN_STEP, center, frame, detected, &pairs),
            pairing_residuals(yaw - GN_STEP, center, frame, detected, &pairs),
        ) {
            (Some(a), Some(b)) => (a, b),
            _ => break,
        };
        let mut jtj = 0.0;
        let mut jtr = 0.0;
        for i in 0..r0.len() {
            let j = (rp[i] - rm[i]) / (2.0 * GN_STEP);
            jtj += j * j;
            jtr += j * r0[i];
        }
        let delta = -jtr / (jtj + lambda);
        if !delta.is_finite() {
            break;
        }
        let candidate = yaw + delta;
        let new_cost = pairing_residuals(candidate, center, frame, detected, &pairs)
            .map(|r| cost_of(&r));
        match new_cost {
            Some(c) if c < cost => {
                yaw = candidate;
                cost = c;
                lambda = (lambda / 10.0).max(1e-12);
            }
            _ => lambda *= 10.0,
        }
        if delta.abs() < GN_TOL {
            break;
        }
    }
    Ok(YawEstimate { yaw: wrap_angle(yaw), method: YawMethod::LineAlignment, n_matches, residual: cost })
}

/// Yaw from the principal direction of the points' X-Y projection, folded
/// through the quarter-turn canonicalization. Fails on clouds that are too
/// small, rank-deficient within 1e-9 (collinear after projection), or
/// isotropic within 1e-9 (no dominant direction).
pub fn estimate_yaw_pca(points: &[Vector3<f64>]) -> Result<YawEstimate, PoseError> {
    if points.len() < 3 {
        return Err(PoseError::TooFewPoints { got: points.len() });
    }
    let mut mean = Vector2::zeros();
    for p in points {
        mean += Vector2::new(p.x, p.y);
    }
    mean /= points.len() as f64;
    let mut cov = Matrix2::zeros();
    for p in points {
        let d = Vector2::new(p.x, p.y) - mean;
        cov += d * d.transpose();
    }
    cov /= points.len() as f64;
    let eig = cov.symmetric_eigen();
    let (major, minor) = if eig.eigenvalues[0] >= eig.eigenvalues[1] { (0, 1) } else { (1, 0) };
    let l_max = eig.eigenvalues[major];
    let l_min = eig.eigenvalues[minor];
    if l_min < 1e-9 || (l_max - l_min) < 1e-9 {
        return Err(PoseError::DegenerateDirection);
    }
    let v = eig.eigenvectors.column(major);
    // The principal direction is a line, not a vector; fold it through the
    // quarter-turn symmetry so the reported yaw is canonical. The swap flag
    // is irrelevant here because no semi-axes have been fitted yet.
    let (yaw, _) = normalize_yaw_singularity(v.y.atan2(v.x));
    Ok(YawEstimate { yaw, method: YawMethod::Pca, n_matches: 0, residual: l_min / l_max })
}

/// Canonicalizes a yaw against the quarter-turn symmetry: returns the
/// equivalent yaw in [-45 deg, 45 deg) and whether an odd number of
/// quarter-turns was folded away — in which case the x and y semi-axes of an
/// already-fitted body must be swapped to describe the same shape.
pub fn normalize_yaw_singularity(yaw: f64) -> (f64, bool) {
    let quarter = std::f64::consts::FRAC_PI_2;
    let k = ((yaw + quarter / 2.0).div_euclid(quarter)) as i64;
    let normalized = yaw - k as f64 * quarter;
    (normalized, k.rem_euclid(2) == 1)
}

/// Running average of yaw estimates on the quarter-turn torus: each new
/// estimate is unwrapped to the representative nearest the running value
/// before the incremental mean update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct YawHistory {
    n: usize,
    value: f64,
}

impl Default for YawHistory {
    fn default() -> Self {
        Self::new()
    }
}

impl YawHistory {
    /// Empty history; the first update adopts its estimate unchanged.
    pub fn new() -> Self {
        YawHistory { n: 0, value: 0.0 }
    }

    /// Number of estimates folded in.
    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// Current running yaw (meaningless while empty).
    pub fn value(&self) -> f64 {
        self.value
    }

    /// Folds in one more estimate with the incremental mean
    /// `y_n = (1 - 1/n) y_{n-1} + (1/n) y*`, after unwrapping the estimate by
    /// quarter turns to land nearest the running value.
    pub fn update(&mut self, new_yaw: f64) {
        if self.n == 0 {
            self.value = new_yaw;
            self.n = 1;
            return;
        }
        let unwrapped = unwrap_quarter(new_yaw, self.value);
        let n1 = (self.n + 1) as f64;
        // y + (u - y)/n is the same recursion as (1 - 1/n) y + u/n but stays
        // bit-exact when the new estimate equals the running value.
        self.value += (unwrapped - self.value) / n1;
        self.n += 1;
    }

    /// Pools two histories, weighting by their counts.
    pub fn merged(a: &YawHistory, b: &YawHistory) -> YawHistory {
        if a.n == 0 {
            return *b;
        }
        if b.n == 0 {
            return *a;
        }
        let unwrapped = unwrap_quarter(b.value, a.value);
        let n = a.n + b.n;
        YawHistory { n, value: (a.n as f64 * a.value + b.n as f64 * unwrapped) / n as f64 }
    }
}

/// Shifts `yaw` by quarter turns until it lies within 45 degrees of `anchor`.
fn unwrap_quarter(yaw: f64, anchor: f64) -> f64 {
    let quarter = std::f64::consts::FRAC_PI_2;
    yaw + quarter * ((anchor - yaw) / quarter).round()
}
