//! Outlier rejection for accumulated object point clouds.
//!
//! Two complementary filters: a cheap reprojection gate that drops points
//! falling outside the current detection box, and an extended isolation
//! forest that isolates points with random oblique hyperplanes and scores
//! them by expected isolation depth. Both are deterministic for fixed seeds.

use std::fmt;

use nalgebra::Vector3;
use rand::Rng;
use rand_chacha::rand_core::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::camera::{project_point, BBox, CameraFrame};

/// Euler-Mascheroni constant used by the harmonic-number approximation.
const EULER_GAMMA: f64 = 0.5772156649;

/// Errors from forest construction.
#[derive(Debug, Clone, PartialEq)]
pub enum OutlierError {
    /// Forest training needs at least two points.
    TooFewPoints { got: usize },
    /// A configuration field violated its documented range.
    BadConfig(String),
}

impl fmt::Display for OutlierError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            OutlierError::TooFewPoints { got } => {
                write!(f, "isolation forest needs at least 2 points, got {got}")
            }
            OutlierError::BadConfig(msg) => write!(f, "bad filter config: {msg}"),
        }
    }
}

impl std::error::Error for OutlierError {}

/// Isolation-forest parameters.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct EifConfig {
    /// Number of trees in the ensemble.
    pub n_trees: usize,
    /// Per-tree subsample size; clamped to the point count at build time.
    pub subsample_size: usize,
    /// Maximum tree depth; `None` derives `ceil(log2(subsample))`.
    pub depth_limit: Option<usize>,
    /// Points scoring above this are outlier candidates.
    pub score_threshold: f64,
    /// Base seed; each tree draws from an independent stream.
    pub seed: u64,
}

impl Default for EifConfig {
    fn default() -> Self {
        EifConfig {
            n_trees: 100,
            subsample_size: 256,
            depth_limit: None,
            score_threshold: 0.6,
            seed: 0,
        }
    }
}

impl EifConfig {
    fn validate(&self) -> Result<(), OutlierError> {
        if self.n_trees < 1 {
            return Err(OutlierError::BadConfig("n_trees must be >= 1".into()));
        }
        if self.subsample_size < 2 {
            return Err(OutlierError::BadConfig("subsample_size must be >= 2".into()));
        }
        if let Some(d) = self.depth_limit {
            if d < 1 {
                return Err(OutlierError::BadConfig("depth_limit must be >= 1".into()));
            }
        }
        if !(self.score_threshold > 0.0 && self.score_threshold < 1.0) {
            return Err(OutlierError::BadConfig("score_threshold must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

/// Average unsuccessful-search depth of a binary search tree over `n` points;
/// normalizes isolation depths. Exact harmonic sums are used for small `n`,
/// the log approximation beyond.
pub fn average_path_length(n: usize) -> f64 {
    if n <= 1 {
        return 0.0;
    }
    let h = |k: usize| -> f64 {
        if k <= 10 {
            (1..=k).map(|i| 1.0 / i as f64).sum()
        } else {
            (k as f64).ln() + EULER_GAMMA
        }
    };
    2.0 * h(n - 1) - 2.0 * (n - 1) as f64 / n as f64
}

/// One tree node: an oblique split or a terminal bucket.
#[derive(Debug, Clone)]
enum Node {
    Branch { normal: Vector3<f64>, intercept: f64, left: u32, right: u32 },
    Leaf { size: u32 },
}

/// A single isolation tree, nodes stored in a flat arena.
#[derive(Debug, Clone)]
struct Tree {
    nodes: Vec<Node>,
    root: u32,
}

impl Tree {
    /// Isolation depth of a query point, with the standard correction for
    /// buckets that still hold several points.
    fn path_length(&self, p: &Vector3<f64>) -> f64 {
        let mut idx = self.root;
        let mut depth = 0.0;
        loop {
            match &self.nodes[idx as usize] {
                Node::Leaf { size } => return depth + average_path_length(*size as usize),
                Node::Branch { normal, intercept, left, right } => {
                    idx = if p.dot(normal) <= *intercept { *left } else { *right };
                    depth += 1.0;
                }
            }
        }
    }
}

/// Trained ensemble of isolation trees.
#[derive(Debug, Clone)]
pub struct EifForest {
    trees: Vec<Tree>,
    /// Effective per-tree subsample size used during training.
    subsample_size: usize,
}

fn build_node(
    nodes: &mut Vec<Node>,
    points: &[Vector3<f64>],
    indices: &mut [usize],
    depth: usize,
    depth_limit: usize,
    rng: &mut ChaCha8Rng,
) -> u32 {
    if depth >= depth_limit || indices.len() <= 1 {
        nodes.push(Node::Leaf { size: indices.len() as u32 });
        return (nodes.len() - 1) as u32;
    }
    // Fully extended split: random hyperplane normal from an isotropic
    // Gaussian, intercept uniform over the projections of the branch data.
    let normal = Vector3::new(
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
        rng.sample::<f64, _>(StandardNormal),
    );
    let mut pmin = f64::INFINITY;
    let mut pmax = f64::NEG_INFINITY;
    for &i in indices.iter() {
        let proj = points[i].dot(&normal);
        pmin = pmin.min(proj);
        pmax = pmax.max(proj);
    }
    let intercept = if pmax - pmin < 1e-12 {
        pmin
    } else {
        rng.random_range(pmin..=pmax)
    };
    // Partition in place: left half holds projections <= intercept.
    let mut split = 0;
    for i in 0..indices.len() {
        if points[indices[i]].dot(&normal) <= intercept {
            indices.swap(i, split);
            split += 1;
        }
    }
    let (left_idx, right_idx) = indices.split_at_mut(split);
    let left = build_node(nodes, points, left_idx, depth + 1, depth_limit, rng);
    let right = build_node(nodes, points, right_idx, depth + 1, depth_limit, rng);
    nodes.push(Node::Branch { normal, intercept, left, right });
    (nodes.len() - 1) as u32
}

/// Trains an isolation forest on the given points. Each tree subsamples
/// without replacement from its own random stream derived from the config
/// seed plus the tree index, so results do not depend on build order.
pub fn build_forest(points: &[Vector3<f64>], cfg: &EifConfig) -> Result<EifForest, OutlierError> {
    cfg.validate()?;
    if points.len() < 2 {
        return Err(OutlierError::TooFewPoints { got: points.len() });
    }
    let subsample = cfg.subsample_size.min(points.len());
    let depth_limit = cfg
        .depth_limit
        .unwrap_or_else(|| (subsample as f64).log2().ceil() as usize)
        .max(1);
    let mut trees = Vec::with_capacity(cfg.n_trees);
    for t in 0..cfg.n_trees {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(t as u64 + 1);
        let mut indices: Vec<usize> =
            rand::seq::index::sample(&mut rng, points.len(), subsample).into_vec();
        let mut nodes = Vec::new();
        let root = build_node(&mut nodes, points, &mut indices, 0, depth_limit, &mut rng);
        trees.push(Tree { nodes, root });
    }
    Ok(EifForest { trees, subsample_size: subsample })
}

/// Anomaly score in (0, 1): `2^(-E[depth] / c(subsample))`. Higher is more
/// isolated; scores above ~0.6 flag likely outliers.
pub fn anomaly_score(forest: &EifForest, p: &Vector3<f64>) -> f64 {
    let total: f64 = forest.trees.iter().map(|t| t.path_length(p)).sum();
    let mean = total / forest.trees.len() as f64;
    2f64.powf(-mean / average_path_length(forest.subsample_size))
}

/// Result of a batch outlier pass.
#[derive(Debug, Clone)]
pub struct FilterOutcome {
    /// Per-point keep mask, same length and order as the input.
    pub keep: Vec<bool>,
    /// Per-point anomaly scores (empty when filtering was skipped).
    pub scores: Vec<f64>,
    /// False when the input was too small to filter and passed through as-is.
    pub applied: bool,
    /// Number of points marked for removal.
    pub n_removed: usize,
}

/// Scores every point against a forest trained on the same batch and flags
/// those above the threshold, never removing more than half the batch (the
/// worst offenders go first). Batches under 4 points pass through unfiltered,
/// reported via `applied`.
pub fn filter_outliers(points: &[Vector3<f64>], cfg: &EifConfig) -> Result<FilterOutcome, OutlierError> {
    cfg.validate()?;
    let n = points.len();
    if n < 4 {
        return Ok(FilterOutcome { keep: vec![true; n], scores: Vec::new(), applied: false, n_removed: 0 });
    }
    let forest = build_forest(points, cfg)?;
    let scores: Vec<f64> = points.iter().map(|p| anomaly_score(&forest, p)).collect();
    let mut candidates: Vec<usize> =
        (0..n).filter(|&i| scores[i] > cfg.score_threshold).collect();
    // Safety cap: drop at most half the batch, worst scores first,
    // ties broken by index so the outcome is deterministic.
    let cap = n / 2;
    if candidates.len() > cap {
        candidates.sort_by(|&a, &b| {
            scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b))
        });
        candidates.truncate(cap);
    }
    let mut keep = vec![true; n];
    for &i in &candidates {
        keep[i] = false;
    }
    let n_removed = candidates.len();
    Ok(FilterOutcome { keep, scores, applied: true, n_removed })
}

/// Entry-gate variant of [`filter_outliers`]: trains on the full set so the
/// established cloud provides density context, but scores and flags only the
/// suffix starting at `first_new` (points appended this frame). Earlier
/// points are always kept — each point is vetted once, on entry — and the
/// safety cap applies to the suffix: at most half of the new batch goes.
/// `scores` aligns with the scored suffix. Inputs under 4 points, or an
/// empty suffix, pass through unfiltered.
pub fn filter_new_points(
    points: &[Vector3<f64>],
    first_new: usize,
    cfg: &EifConfig,
) -> Result<FilterOutcome, OutlierError> {
    cfg.validate()?;
    let n = points.len();
    let first_new = first_new.min(n);
    let n_new = n - first_new;
    if n < 4 || n_new == 0 {
        return Ok(FilterOutcome { keep: vec![true; n], scores: Vec::new(), applied: false, n_removed: 0 });
    }
    let forest = build_forest(points, cfg)?;
    let scores: Vec<f64> =
        points[first_new..].iter().map(|p| anomaly_score(&forest, p)).collect();
    let mut candidates: Vec<usize> =
        (0..n_new).filter(|&i| scores[i] > cfg.score_threshold).collect();
    let cap = n_new / 2;
    if candidates.len() > cap {
        candidates.sort_by(|&a, &b| {
            scores[b].partial_cmp(&scores[a]).unwrap().then(a.cmp(&b))
        });
        candidates.truncate(cap);
    }
    let mut keep = vec![true; n];
    for &i in &candidates {
        keep[first_new + i] = false;
    }
    let n_removed = candidates.len();
    Ok(FilterOutcome { keep, scores, applied: true, n_removed })
}

/// Keeps cloud points whose projection lands inside the detection box
/// (inclusive). Points behind the camera cannot be tested against the box
/// and are kept.
pub fn reprojection_filter(points: &[Vector3<f64>], frame: &CameraFrame, bbox: &BBox) -> Vec<bool> {
    points
        .iter()
        .map(|p| match project_point(frame, p) {
            Some(px) => bbox.contains(&px),
            None => true,
        })
        .collect()
}
