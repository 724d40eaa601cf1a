//! Superquadric size and shape recovery from object-frame point clouds.
//!
//! The two halves of the body's geometry are estimated separately: semi-axis
//! lengths come directly from the cloud's extent, while the two shape
//! exponents are found by weighted damped least squares over the radial
//! surface distance, seeded from a coarse grid search so the non-convex cost
//! starts in the right basin.

use std::fmt;

use nalgebra::Vector3;

use crate::superquadric::{
    GeometryError, ObjectPose, ShapeParams, SizeParams, Superquadric, EPS_MAX, EPS_MIN,
};

/// Minimum number of points accepted by the shape optimizer.
pub const MIN_FIT_POINTS: usize = 8;

/// Errors from size or shape fitting.
#[derive(Debug, Clone, PartialEq)]
pub enum FitError {
    /// Fewer points than the operation needs.
    TooFewPoints { got: usize, need: usize },
    /// The cloud has (numerically) zero extent along an axis.
    DegenerateExtent { axis: usize },
    /// Every grid initialization produced a non-finite cost.
    NonFiniteCost,
    /// Invalid solver configuration.
    BadConfig { message: &'static str },
    /// Size parameters rejected by their own validation.
    Geometry(GeometryError),
}

impl fmt::Display for FitError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FitError::TooFewPoints { got, need } => {
                write!(f, "need at least {need} points, got {got}")
            }
            FitError::DegenerateExtent { axis } => {
                write!(f, "point cloud has zero extent along axis {axis}")
            }
            FitError::NonFiniteCost => write!(f, "cost is non-finite at every initialization"),
            FitError::BadConfig { message } => write!(f, "invalid fit config: {message}"),
            FitError::Geometry(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for FitError {}

impl From<GeometryError> for FitError {
    fn from(e: GeometryError) -> Self {
        FitError::Geometry(e)
    }
}

/// Hyperparameters of the shape optimizer.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct FitConfig {
    /// Grid-search resolution per exponent axis (grid_steps² evaluations).
    pub grid_steps: usize,
    /// Cap on damped least-squares iterations.
    pub max_iterations: usize,
    /// Stop once an accepted step moves the exponents less than this.
    pub convergence_tol: f64,
    /// Initial damping factor.
    pub lm_lambda_init: f64,
    /// Multiplicative damping adjustment on accepted/rejected steps.
    pub lm_lambda_factor: f64,
}

impl Default for FitConfig {
    fn default() -> Self {
        FitConfig {
            grid_steps: 10,
            max_iterations: 50,
            convergence_tol: 1e-6,
            lm_lambda_init: 1e-3,
            lm_lambda_factor: 10.0,
        }
    }
}

impl FitConfig {
    /// Checks the invariants the solver relies on.
    pub fn validate(&self) -> Result<(), FitError> {
        if self.grid_steps < 2 {
            return Err(FitError::BadConfig { message: "grid_steps must be at least 2" });
        }
        if !(self.convergence_tol > 0.0)
            || !(self.lm_lambda_init > 0.0)
            || !(self.lm_lambda_factor > 0.0)
        {
            return Err(FitError::BadConfig { message: "tolerances and damping must be positive" });
        }
        if self.max_iterations == 0 {
            return Err(FitError::BadConfig { message: "max_iterations must be positive" });
        }
        Ok(())
    }
}

/// Result of a shape optimization run.
#[derive(Debug, Clone, Copy)]
pub struct ShapeFit {
    pub shape: ShapeParams,
    /// Final weighted cost.
    pub cost: f64,
    /// Cost at the grid sample chosen as initialization.
    pub grid_cost: f64,
    /// Damped least-squares iterations spent.
    pub iterations: usize,
}

/// Semi-axis lengths from the component-wise extent of an object-frame
/// cloud: `a = (max(P) - min(P)) / 2` per axis.
pub fn size_from_extent(points_obj: &[Vector3<f64>]) -> Result<SizeParams, FitError> {
    if points_obj.len() < 2 {
        return Err(FitError::TooFewPoints { got: points_obj.len(), need: 2 });
    }
    let mut lo = points_obj[0];
    let mut hi = points_obj[0];
    for p in &points_obj[1..] {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let half = (hi - lo) / 2.0;
    for axis in 0..3 {
        if !(half[axis] > 1e-12) {
            return Err(FitError::DegenerateExtent { axis });
        }
    }
    Ok(SizeParams::new(half.x, half.y, half.z)?)
}

/// Optimization weights: each point's weight grows linearly with its distance
/// from the body center, from 0 at the closest point to 1 at the farthest.
/// Far points pin down the surface; near points may belong to concave
/// interiors and are trusted less. If every norm ties (a perfect sphere
/// shell), all weights are 1 so the objective does not vanish.
pub fn compute_weights(points_obj: &[Vector3<f64>]) -> Result<Vec<f64>, FitError> {
    if points_obj.len() < 2 {
        return Err(FitError::TooFewPoints { got: points_obj.len(), need: 2 });
    }
    let norms: Vec<f64> = points_obj.iter().map(|p| p.norm()).collect();
    let min = norms.iter().cloned().fold(f64::INFINITY, f64::min);
    let max = norms.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    if span <= 1e-12 * max.max(1.0) {
        return Ok(vec![1.0; points_obj.len()]);
    }
    Ok(norms.iter().map(|n| (n - min) / span).collect())
}

fn body_with(size: SizeParams, eps1: f64, eps2: f64) -> Superquadric {
    let shape = ShapeParams::new(eps1, eps2).expect("exponents are kept inside the valid box");
    let pose = ObjectPose::new(0.0, Vector3::zeros()).expect("identity pose is valid");
    Superquadric::new(size, shape, pose)
}

/// Weighted radial-distance cost `sum_i alpha_i * G(p_i)^2` at a candidate
/// exponent pair, with the identity pose (points are object-frame).
pub fn weighted_cost(
    points_obj: &[Vector3<f64>],
    weights: &[f64],
    size: SizeParams,
    eps1: f64,
    eps2: f64,
) -> f64 {
    let body = body_with(size, eps1, eps2);
    points_obj
        .iter()
        .zip(weights)
        .map(|(p, &w)| {
            let g = body.radial_distance(p);
            w * g * g
        })
        .sum()
}

/// Gradient of `weighted_cost` with respect to (eps1, eps2) by central
/// differences with a 1e-4 step, the same derivative the solver uses.
pub fn cost_gradient(
    points_obj: &[Vector3<f64>],
    weights: &[f64],
    size: SizeParams,
    eps1: f64,
    eps2: f64,
) -> [f64; 2] {
    const H: f64 = 1e-4;
    let d1 = (weighted_cost(points_obj, weights, size, eps1 + H, eps2)
        - weighted_cost(points_obj, weights, size, eps1 - H, eps2))
        / (2.0 * H);
    let d2 = (weighted_cost(points_obj, weights, size, eps1, eps2 + H)
        - weighted_cost(points_obj, weights, size, eps1, eps2 - H))
        / (2.0 * H);
    [d1, d2]
}

/// Per-point weighted residuals `sqrt(alpha_i) * G(p_i)` at a candidate.
fn residuals(
    points_obj: &[Vector3<f64>],
    sqrt_weights: &[f64],
    size: SizeParams,
    eps1: f64,
    eps2: f64,
    out: &mut Vec<f64>,
) {
    let body = body_with(size, eps1, eps2);
    out.clear();
    out.extend(
        points_obj
            .iter()
            .zip(sqrt_weights)
            .map(|(p, &sw)| sw * body.radial_distance(p)),
    );
}

fn cost_of(residuals: &[f64]) -> f64 {
    residuals.iter().map(|r| r * r).sum()
}

fn clamp_eps(e: f64) -> f64 {
    e.clamp(EPS_MIN, EPS_MAX)
}

/// Fits the two shape exponents to an object-frame cloud with the size held
/// fixed: grid search over [0.1, 1.9]² picks the initialization (ties go to
/// the lexicographically smallest exponent pair), then box-constrained damped
/// least squares with a numeric Jacobian polishes it.
pub fn fit_shape(
    points_obj: &[Vector3<f64>],
    size: SizeParams,
    cfg: &FitConfig,
) -> Result<ShapeFit, FitError> {
    cfg.validate()?;
    if points_obj.len() < MIN_FIT_POINTS {
        return Err(FitError::TooFewPoints { got: points_obj.len(), need: MIN_FIT_POINTS });
    }
    let weights = compute_weights(points_obj)?;
    let sqrt_weights: Vec<f64> = weights.iter().map(|w| w.sqrt()).collect();

    // Coarse grid over the exponent box.
    let mut init: Option<(f64, f64, f64)> = None;
    for i in 0..cfg.grid_steps {
        let e1 = EPS_MIN + (EPS_MAX - EPS_MIN) * i as f64 / (cfg.grid_steps - 1) as f64;
        for j in 0..cfg.grid_steps {
            let e2 = EPS_MIN + (EPS_MAX - EPS_MIN) * j as f64 / (cfg.grid_steps - 1) as f64;
            let c = weighted_cost(points_obj, &weights, size, e1, e2);
            if !c.is_finite() {
                continue;
            }
            let better = match init {
                None => true,
                // Strict inequality keeps the lexicographically first pair on
                // ties because the scan order is ascending (e1, e2).
                Some((best, _, _)) => c < best,
            };
            if better {
                init = Some((c, e1, e2));
            }
        }
    }
    let (grid_cost, mut e1, mut e2) = init.ok_or(FitError::NonFiniteCost)?;

    const JAC_STEP: f64 = 1e-4;
    let mut r0 = Vec::new();
    let mut rp = Vec::new();
    let mut rm = Vec::new();
    let mut r_try = Vec::new();
    residuals(points_obj, &sqrt_weights, size, e1, e2, &mut r0);
    let mut cost = cost_of(&r0);
    let mut lambda = cfg.lm_lambda_init;
    let mut iterations = 0;

    for _ in 0..cfg.max_iterations {
        iterations += 1;
        // Numeric Jacobian, one column per exponent, by central differences.
        let mut jtj = [[0.0f64; 2]; 2];
        let mut jtr = [0.0f64; 2];
        let mut cols: [Vec<f64>; 2] = [Vec::new(), Vec::new()];
        for (k, col) in cols.iter_mut().enumerate() {
            let (d1p, d2p) = if k == 0 { (JAC_STEP, 0.0) } else { (0.0, JAC_STEP) };
            residuals(points_obj, &sqrt_weights, size, e1 + d1p, e2 + d2p, &mut rp);
            residuals(points_obj, &sqrt_weights, size, e1 - d1p, e2 - d2p, &mut rm);
            *col = rp
                .iter()
                .zip(rm.iter())
                .map(|(a, b)| (a - b) / (2.0 * JAC_STEP))
                .collect();
        }
        for i in 0..r0.len() {
            for a in 0..2 {
                jtr[a] += cols[a][i] * r0[i];
                for b in 0..2 {
                    jtj[a][b] += cols[a][i] * cols[b][i];
                }
            }
        }
        // Damped 2x2 normal equations.
        let a = jtj[0][0] + lambda;
        let b = jtj[0][1];
        let c = jtj[1][1] + lambda;
        let det = a * c - b * b;
        if det.abs() < 1e-30 || !det.is_finite() {
            break;
        }
        let d1 = -(c * jtr[0] - b * jtr[1]) / det;
        let d2 = -(-b * jtr[0] + a * jtr[1]) / det;
        let cand1 = clamp_eps(e1 + d1);
        let cand2 = clamp_eps(e2 + d2);
        residuals(points_obj, &sqrt_weights, size, cand1, cand2, &mut r_try);
        let cand_cost = cost_of(&r_try);
        if cand_cost.is_finite() && cand_cost < cost {
            let moved = ((cand1 - e1).powi(2) + (cand2 - e2).powi(2)).sqrt();
            e1 = cand1;
            e2 = cand2;
            cost = cand_cost;
            std::mem::swap(&mut r0, &mut r_try);
            lambda = (lambda / cfg.lm_lambda_factor).max(1e-15);
            if moved < cfg.convergence_tol {
                break;
            }
        } else {
            lambda *= cfg.lm_lambda_factor;
            if lambda > 1e12 {
                break;
            }
        }
    }

    Ok(ShapeFit {
        shape: ShapeParams::new(e1, e2).expect("exponents stay clamped to the valid box"),
        cost,
        grid_cost,
        iterations,
    })
}

/// Full landmark fit: expresses world points in the object frame given the
/// current pose estimate, takes the size from their extent, fits the shape
/// exponents, and assembles the body at that pose.
pub fn fit_landmark(
    points_world: &[Vector3<f64>],
    pose: &ObjectPose,
    cfg: &FitConfig,
) -> Result<Superquadric, FitError> {
    if points_world.len() < MIN_FIT_POINTS {
        return Err(FitError::TooFewPoints { got: points_world.len(), need: MIN_FIT_POINTS });
    }
    let points_obj: Vec<Vector3<f64>> =
        points_world.iter().map(|p| pose.world_to_object(p)).collect();
    let size = size_from_extent(&points_obj)?;
    let fit = fit_shape(&points_obj, size, cfg)?;
    Ok(Superquadric::new(size, fit.shape, *pose))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::superquadric::iou_3d;
    use approx::assert_abs_diff_eq;
    use nalgebra::Vector3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn surface_points(body: &Superquadric, n_eta: usize, n_omega: usize) -> Vec<Vector3<f64>> {
        body.sample_surface(n_eta, n_omega)
            .unwrap()
            .into_iter()
            .map(|sp| sp.position)
            .collect()
    }

    fn identity_pose() -> ObjectPose {
        ObjectPose::new(0.0, Vector3::zeros()).unwrap()
    }

    #[test]
    fn size_from_extent_reference() {
        let pts = vec![Vector3::new(-1.0, -2.0, 0.0), Vector3::new(1.0, 2.0, 4.0)];
        let s = size_from_extent(&pts).unwrap();
        assert_eq!((s.ax(), s.ay(), s.az()), (1.0, 2.0, 2.0));
        assert!(matches!(
            size_from_extent(&pts[..1]),
            Err(FitError::TooFewPoints { got: 1, need: 2 })
        ));
        let flat = vec![Vector3::new(0.0, -1.0, 2.0), Vector3::new(0.0, 1.0, 3.0)];
        assert_eq!(size_from_extent(&flat), Err(FitError::DegenerateExtent { axis: 0 }));
    }

    #[test]
    fn size_from_dense_surface_sampling() {
        for &(e1, e2) in &[(0.1, 0.1), (1.0, 1.0), (1.9, 0.5)] {
            let body = Superquadric::new(
                SizeParams::new(0.8, 0.5, 0.3).unwrap(),
                ShapeParams::new(e1, e2).unwrap(),
                identity_pose(),
            );
            let pts = surface_points(&body, 16, 32);
            let s = size_from_extent(&pts).unwrap();
            for (got, want) in [(s.ax(), 0.8), (s.ay(), 0.5), (s.az(), 0.3)] {
                assert!(
                    (got - want).abs() / want < 0.02,
                    "eps ({e1},{e2}): got {got}, want {want}"
                );
            }
        }
    }

    #[test]
    fn weights_reference_cases() {
        let pts = vec![
            Vector3::new(1.0, 0.0, 0.0),
            Vector3::new(0.0, 2.0, 0.0),
            Vector3::new(0.0, 0.0, 3.0),
        ];
        let w = compute_weights(&pts).unwrap();
        assert_eq!(w, vec![0.0, 0.5, 1.0]);

        let pts = vec![
            Vector3::new(5.0, 0.0, 0.0),
            Vector3::new(0.0, 5.0, 0.0),
            Vector3::new(0.0, 0.0, 10.0),
        ];
        assert_eq!(compute_weights(&pts).unwrap(), vec![0.0, 0.0, 1.0]);

        // Equal norms: the degenerate rule keeps the objective alive.
        let shell: Vec<Vector3<f64>> = (0..10)
            .map(|i| {
                let a = i as f64;
                Vector3::new(a.cos() * 2.0, a.sin() * 2.0, 0.0)
            })
            .collect();
        let w = compute_weights(&shell).unwrap();
        assert!(w.iter().all(|&x| x == 1.0));
    }

    #[test]
    fn sphere_shape_recovered() {
        let truth = Superquadric::new(
            SizeParams::new(1.0, 1.0, 1.0).unwrap(),
            ShapeParams::new(1.0, 1.0).unwrap(),
            identity_pose(),
        );
        let pts = surface_points(&truth, 14, 28);
        let size = size_from_extent(&pts).unwrap();
        let fit = fit_shape(&pts, size, &FitConfig::default()).unwrap();
        assert!((fit.shape.eps1() - 1.0).abs() < 0.05, "eps1 = {}", fit.shape.eps1());
        assert!((fit.shape.eps2() - 1.0).abs() < 0.05, "eps2 = {}", fit.shape.eps2());
        assert!(fit.cost <= fit.grid_cost + 1e-15);
    }

    #[test]
    fn cube_like_shape_recovered_under_noise() {
        let truth = Superquadric::new(
            SizeParams::new(0.5, 0.4, 0.3).unwrap(),
            ShapeParams::new(0.1, 0.1).unwrap(),
            identity_pose(),
        );
        let clean = surface_points(&truth, 15, 30);
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let noisy: Vec<Vector3<f64>> = clean
            .iter()
            .map(|p| {
                p + Vector3::new(
                    rng.random_range(-0.005..0.005),
                    rng.random_range(-0.005..0.005),
                    rng.random_range(-0.005..0.005),
                )
            })
            .collect();
        let size = size_from_extent(&noisy).unwrap();
        let fit = fit_shape(&noisy, size, &FitConfig::default()).unwrap();
        assert!(fit.shape.eps1() <= 0.3, "eps1 = {}", fit.shape.eps1());
        assert!(fit.shape.eps2() <= 0.3, "eps2 = {}", fit.shape.eps2());
        let fitted = Superquadric::new(size, fit.shape, identity_pose());
        let iou = iou_3d(&fitted, &truth, 200_000, 99);
        assert!(iou >= 0.85, "iou = {iou}");
    }

    #[test]
    fn equal_norm_cloud_still_fits() {
        // Eight points on a common sphere: weights all tie at 1.0.
        let pts: Vec<Vector3<f64>> = (0..8)
            .map(|i| {
                let sx = if i & 1 == 0 { -1.0f64 } else { 1.0 };
                let sy = if i & 2 == 0 { -1.0f64 } else { 1.0 };
                let sz = if i & 4 == 0 { -1.0f64 } else { 1.0 };
                Vector3::new(sx, sy, sz).normalize()
            })
            .collect();
        let size = SizeParams::new(1.0, 1.0, 1.0).unwrap();
        let fit = fit_shape(&pts, size, &FitConfig::default()).unwrap();
        assert!(fit.cost.is_finite());
        for e in [fit.shape.eps1(), fit.shape.eps2()] {
            assert!((EPS_MIN..=EPS_MAX).contains(&e));
        }
    }

    #[test]
    fn gradient_matches_independent_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(31);
        for _ in 0..100 {
            let size = SizeParams::new(
                rng.random_range(0.3..1.5),
                rng.random_range(0.3..1.5),
                rng.random_range(0.3..1.5),
            )
            .unwrap();
            let truth = Superquadric::new(
                size,
                ShapeParams::new(rng.random_range(0.2..1.8), rng.random_range(0.2..1.8)).unwrap(),
                identity_pose(),
            );
            let pts = surface_points(&truth, 6, 10);
            let weights = compute_weights(&pts).unwrap();
            let e1 = rng.random_range(0.3..1.7);
            let e2 = rng.random_range(0.3..1.7);
            let g = cost_gradient(&pts, &weights, size, e1, e2);
            // Independent check with a different step size.
            let h = 1e-5;
            let gi = [
                (weighted_cost(&pts, &weights, size, e1 + h, e2)
                    - weighted_cost(&pts, &weights, size, e1 - h, e2))
                    / (2.0 * h),
                (weighted_cost(&pts, &weights, size, e1, e2 + h)
                    - weighted_cost(&pts, &weights, size, e1, e2 - h))
                    / (2.0 * h),
            ];
            for k in 0..2 {
                let denom = g[k].abs().max(gi[k].abs()).max(1e-6);
                assert!(
                    ((g[k] - gi[k]) / denom).abs() < 1e-5,
                    "gradient mismatch: {} vs {}",
                    g[k],
                    gi[k]
                );
            }
        }
    }

    #[test]
    fn ellipsoid_cost_vanishes_at_unit_exponents() {
        let truth = Superquadric::new(
            SizeParams::new(1.5, 1.0, 0.75).unwrap(),
            ShapeParams::new(1.0, 1.0).unwrap(),
            identity_pose(),
        );
        let pts = surface_points(&truth, 12, 24);
        let weights = compute_weights(&pts).unwrap();
        let size = truth.size;
        let at_unit = weighted_cost(&pts, &weights, size, 1.0, 1.0);
        assert!(at_unit < 1e-9, "cost at (1,1) = {at_unit}");
        // The exact-surface cost at (1,1) is float dust (~1e-28); the solver
        // must land at the same sub-1e-9 scale, not literally below dust.
        let fit = fit_shape(&pts, size, &FitConfig::default()).unwrap();
        assert!(fit.cost < 1e-9, "final cost = {}", fit.cost);
        assert!((fit.shape.eps1() - 1.0).abs() < 0.05);
        assert!((fit.shape.eps2() - 1.0).abs() < 0.05);
    }

    #[test]
    fn landmark_fit_round_trip_and_frame_invariance() {
        let pose = ObjectPose::new(0.4, Vector3::new(1.0, -2.0, 0.5)).unwrap();
        let truth = Superquadric::new(
            SizeParams::new(0.6, 0.4, 0.5).unwrap(),
            ShapeParams::new(0.3, 0.8).unwrap(),
            pose,
        );
        let pts = surface_points(&truth, 14, 28);
        let cfg = FitConfig::default();
        let fitted = fit_landmark(&pts, &pose, &cfg).unwrap();
        let iou = iou_3d(&fitted, &truth, 200_000, 5);
        assert!(iou >= 0.95, "iou = {iou}");

        // Translating pose and points together changes nothing.
        let shift = Vector3::new(10.0, 10.0, 10.0);
        let pose2 = ObjectPose::new(0.4, pose.translation() + shift).unwrap();
        let pts2: Vec<Vector3<f64>> = pts.iter().map(|p| p + shift).collect();
        let fitted2 = fit_landmark(&pts2, &pose2, &cfg).unwrap();
        assert_abs_diff_eq!(fitted.size.ax(), fitted2.size.ax(), epsilon = 1e-9);
        assert_abs_diff_eq!(fitted.size.ay(), fitted2.size.ay(), epsilon = 1e-9);
        assert_abs_diff_eq!(fitted.size.az(), fitted2.size.az(), epsilon = 1e-9);
        assert_abs_diff_eq!(fitted.shape.eps1(), fitted2.shape.eps1(), epsilon = 1e-9);
        assert_abs_diff_eq!(fitted.shape.eps2(), fitted2.shape.eps2(), epsilon = 1e-9);
    }

    #[test]
    fn config_validation() {
        let mut cfg = FitConfig::default();
        cfg.grid_steps = 1;
        assert!(matches!(cfg.validate(), Err(FitError::BadConfig { .. })));
        let mut cfg = FitConfig::default();
        cfg.convergence_tol = 0.0;
        assert!(matches!(cfg.validate(), Err(FitError::BadConfig { .. })));
        let mut cfg = FitConfig::default();
        cfg.max_iterations = 0;
        assert!(matches!(cfg.validate(), Err(FitError::BadConfig { .. })));
        assert!(FitConfig::default().validate().is_ok());
    }

    #[test]
    fn too_few_points_rejected() {
        let pts: Vec<Vector3<f64>> = (0..7)
            .map(|i| Vector3::new(i as f64 * 0.1 + 0.1, (i % 3) as f64 * 0.2 + 0.1, 0.3))
            .collect();
        assert!(matches!(
            fit_shape(&pts, SizeParams::new(1.0, 1.0, 1.0).unwrap(), &FitConfig::default()),
            Err(FitError::TooFewPoints { got: 7, need: 8 })
        ));
    }

    #[test]
    fn grid_cost_dominates_final_cost() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for trial in 0..10 {
            let truth = Superquadric::new(
                SizeParams::new(
                    rng.random_range(0.3..1.2),
                    rng.random_range(0.3..1.2),
                    rng.random_range(0.3..1.2),
                )
                .unwrap(),
                ShapeParams::new(rng.random_range(0.15..1.85), rng.random_range(0.15..1.85))
                    .unwrap(),
                identity_pose(),
            );
            let mut pts = surface_points(&truth, 10, 20);
            for p in pts.iter_mut() {
                *p += Vector3::new(
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                    rng.random_range(-0.01..0.01),
                );
            }
            let size = size_from_extent(&pts).unwrap();
            let fit = fit_shape(&pts, size, &FitConfig::default()).unwrap();
            assert!(fit.cost <= fit.grid_cost + 1e-12, "trial {trial}");
            assert!(fit.cost.is_finite());
        }
    }
}
