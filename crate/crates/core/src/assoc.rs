//! Data association: matching per-frame observations to landmarks and
//! detecting duplicate landmarks.
//!
//! Associations are resolved in three escalating stages: 2D bounding-box
//! overlap against the landmark's previous frame, shared map points as a
//! fallback, and — for observations with no recent frame context — a
//! per-axis Student-t test of the observed centroid against the landmark's
//! centroid history. Duplicate landmarks are detected with a pooled
//! two-sample t-test over their histories.
//!
//! Each t-test checks the three axes independently and requires all of them
//! to pass. To keep the family-wise false-rejection rate at the configured
//! significance level, the per-axis tests run at one third of it (Bonferroni
//! correction); without the correction three independent axes at level 0.05
//! would reject a true association 14% of the time.

use std::fmt;

use nalgebra::Vector3;

use crate::camera::BBox;
use crate::stats::{t_critical, StatsError};

/// Sample standard deviations below this are treated as degenerate
/// (duplicated samples), switching the t-test to an exact mean comparison.
const ZERO_STD_TOL: f64 = 1e-12;
/// Mean-match tolerance used by the degenerate zero-deviation branches.
const DEGENERATE_MEAN_TOL: f64 = 1e-6;
/// Two points within this distance count as the same shared map point.
pub const SHARED_POINT_TOL: f64 = 1e-9;

/// Errors from association statistics.
#[derive(Debug, Clone, PartialEq)]
pub enum AssocError {
    /// A history had fewer samples than the test needs.
    TooFewSamples { got: usize, need: usize },
    /// Invalid configuration value.
    BadConfig { message: &'static str },
    /// Critical-value computation failed (invalid alpha or dof).
    Stats(StatsError),
}

impl fmt::Display for AssocError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            AssocError::TooFewSamples { got, need } => {
                write!(f, "need at least {need} history samples, got {got}")
            }
            AssocError::BadConfig { message } => write!(f, "invalid association config: {message}"),
            AssocError::Stats(e) => write!(f, "{e}"),
        }
    }
}

impl std::error::Error for AssocError {}

impl From<StatsError> for AssocError {
    fn from(e: StatsError) -> Self {
        AssocError::Stats(e)
    }
}

/// Thresholds steering the association cascade.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct AssocConfig {
    /// Minimum bounding-box IoU for an inter-frame match.
    pub iou_threshold: f64,
    /// Minimum shared map points for the fallback match.
    pub shared_point_threshold: usize,
    /// Family-wise significance level of the t-tests.
    pub significance_alpha: f64,
    /// Minimum history length before a landmark joins the isolated test.
    pub min_history: usize,
}

impl Default for AssocConfig {
    fn default() -> Self {
        AssocConfig {
            iou_threshold: 0.3,
            shared_point_threshold: 5,
            significance_alpha: 0.05,
            min_history: 3,
        }
    }
}

impl AssocConfig {
    pub fn validate(&self) -> Result<(), AssocError> {
        if !(self.iou_threshold > 0.0 && self.iou_threshold < 1.0) {
            return Err(AssocError::BadConfig { message: "iou_threshold must be in (0, 1)" });
        }
        if !(self.significance_alpha > 0.0 && self.significance_alpha < 1.0) {
            return Err(AssocError::BadConfig { message: "significance_alpha must be in (0, 1)" });
        }
        if self.min_history < 2 {
            return Err(AssocError::BadConfig { message: "min_history must be at least 2" });
        }
        Ok(())
    }

    /// Per-axis critical value at the Bonferroni-corrected level.
    fn axis_critical(&self, df: usize) -> Result<f64, AssocError> {
        Ok(t_critical(self.significance_alpha / 3.0, df)?)
    }
}

/// Per-observation centroid history of a landmark.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct CentroidHistory {
    samples: Vec<Vector3<f64>>,
}

impl CentroidHistory {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, centroid: Vector3<f64>) {
        self.samples.push(centroid);
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn samples(&self) -> &[Vector3<f64>] {
        &self.samples
    }

    /// Arithmetic mean of the samples (zero vector while empty).
    pub fn mean(&self) -> Vector3<f64> {
        if self.samples.is_empty() {
            return Vector3::zeros();
        }
        let sum: Vector3<f64> = self.samples.iter().sum();
        sum / self.samples.len() as f64
    }

    /// Per-axis sample standard deviation (n−1 denominator); needs ≥ 2
    /// samples.
    pub fn std(&self) -> Result<Vector3<f64>, AssocError> {
        let n = self.samples.len();
        if n < 2 {
            return Err(AssocError::TooFewSamples { got: n, need: 2 });
        }
        let mean = self.mean();
        let mut ss = Vector3::zeros();
        for s in &self.samples {
            let d = s - mean;
            ss += d.component_mul(&d);
        }
        Ok((ss / (n - 1) as f64).map(f64::sqrt))
    }

    /// Concatenation of two histories, `a`'s samples first.
    pub fn merged(a: &CentroidHistory, b: &CentroidHistory) -> CentroidHistory {
        let mut samples = Vec::with_capacity(a.samples.len() + b.samples.len());
        samples.extend_from_slice(&a.samples);
        samples.extend_from_slice(&b.samples);
        CentroidHistory { samples }
    }
}

/// Overlap-over-union of two axis-aligned image boxes.
pub fn bbox_iou(a: &BBox, b: &BBox) -> f64 {
    let ix = (a.xmax.min(b.xmax) - a.xmin.max(b.xmin)).max(0.0);
    let iy = (a.ymax.min(b.ymax) - a.ymin.max(b.ymin)).max(0.0);
    let inter = ix * iy;
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        return 0.0;
    }
    inter / union
}

fn axis_t(mean_diff: f64, scale: f64) -> f64 {
    if scale < ZERO_STD_TOL {
        if mean_diff.abs() <= DEGENERATE_MEAN_TOL {
            0.0
        } else {
            f64::INFINITY.copysign(mean_diff)
        }
    } else {
        mean_diff / scale
    }
}

/// Per-axis single-sample t statistics `sqrt(n) (mean - centroid) / std`
/// with n−1 degrees of freedom. Axes whose deviation is (numerically) zero
/// yield 0 when the centroid matches the mean within 1e-6 and ±infinity
/// otherwise, so degenerate histories still produce a decidable test.
pub fn t_statistic_single(
    history: &CentroidHistory,
    centroid: &Vector3<f64>,
) -> Result<[f64; 3], AssocError> {
    let n = history.len();
    if n < 2 {
        return Err(AssocError::TooFewSamples { got: n, need: 2 });
    }
    let mean = history.mean();
    let std = history.std()?;
    let sqrt_n = (n as f64).sqrt();
    let mut t = [0.0; 3];
    for axis in 0..3 {
        // t = sqrt(n) (mean - c) / std, written as diff / (std / sqrt(n)) so
        // the degenerate zero-deviation branch compares the raw difference.
        t[axis] = axis_t(mean[axis] - centroid[axis], std[axis] / sqrt_n);
    }
    Ok(t)
}

/// Per-axis two-sample t statistics with pooled deviation and
/// n1 + n2 − 2 degrees of freedom.
pub fn t_statistic_double(
    h1: &CentroidHistory,
    h2: &CentroidHistory,
) -> Result<[f64; 3], AssocError> {
    let (n1, n2) = (h1.len(), h2.len());
    if n1 < 2 {
        return Err(AssocError::TooFewSamples { got: n1, need: 2 });
    }
    if n2 < 2 {
        return Err(AssocError::TooFewSamples { got: n2, need: 2 });
    }
    let (m1, m2) = (h1.mean(), h2.mean());
    let (s1, s2) = (h1.std()?, h2.std()?);
    let df = (n1 + n2 - 2) as f64;
    let norm = (1.0 / n1 as f64 + 1.0 / n2 as f64).sqrt();
    let mut t = [0.0; 3];
    for axis in 0..3 {
        let pooled = (((n1 - 1) as f64 * s1[axis] * s1[axis]
            + (n2 - 1) as f64 * s2[axis] * s2[axis])
            / df)
            .sqrt();
        t[axis] = axis_t(m1[axis] - m2[axis], pooled * norm);
    }
    Ok(t)
}

/// Whether a single-sample test accepts the centroid, i.e. every axis stays
/// within the Bonferroni-corrected critical value.
pub fn single_sample_pass(
    history: &CentroidHistory,
    centroid: &Vector3<f64>,
    cfg: &AssocConfig,
) -> Result<bool, AssocError> {
    let t = t_statistic_single(history, centroid)?;
    let crit = cfg.axis_critical(history.len() - 1)?;
    Ok(t.iter().all(|v| v.abs() <= crit))
}

/// Whether a two-sample test accepts the pair of histories as one object.
pub fn double_sample_pass(
    h1: &CentroidHistory,
    h2: &CentroidHistory,
    cfg: &AssocConfig,
) -> Result<bool, AssocError> {
    let t = t_statistic_double(h1, h2)?;
    let crit = cfg.axis_critical(h1.len() + h2.len() - 2)?;
    Ok(t.iter().all(|v| v.abs() <= crit))
}

/// Number of observation points that coincide (within `SHARED_POINT_TOL`)
/// with some landmark cloud point.
pub fn shared_point_count(obs_points: &[Vector3<f64>], cloud: &[Vector3<f64>]) -> usize {
    let tol2 = SHARED_POINT_TOL * SHARED_POINT_TOL;
    obs_points
        .iter()
        .filter(|p| cloud.iter().any(|q| (*p - q).norm_squared() <= tol2))
        .count()
}

/// One landmark as seen by the inter-frame association stage.
#[derive(Debug, Clone, Copy)]
pub struct InterframeCandidate<'a> {
    pub id: u64,
    pub class: u32,
    /// The bounding box this landmark was associated with in the previous
    /// frame.
    pub prev_bbox: BBox,
    pub cloud: &'a [Vector3<f64>],
}

/// Inter-frame association: among same-class landmarks seen in the previous
/// frame, picks the one whose previous box overlaps the observation most
/// (above the IoU threshold); if overlap fails everywhere, falls back to the
/// candidate sharing the most map points with the observation (at least the
/// shared-point threshold). IoU ties break by shared count, then lower id.
pub fn associate_interframe(
    obs_class: u32,
    obs_bbox: &BBox,
    obs_points: &[Vector3<f64>],
    candidates: &[InterframeCandidate<'_>],
    cfg: &AssocConfig,
) -> Option<u64> {
    let mut best_iou: Option<(f64, usize, u64)> = None;
    for cand in candidates.iter().filter(|c| c.class == obs_class) {
        let iou = bbox_iou(obs_bbox, &cand.prev_bbox);
        if iou <= cfg.iou_threshold {
            continue;
        }
        let shared = shared_point_count(obs_points, cand.cloud);
        let better = match &best_iou {
            None => true,
            Some((bi, bs, bid)) => {
                iou > *bi
                    || (iou == *bi && shared > *bs)
                    || (iou == *bi && shared == *bs && cand.id < *bid)
            }
        };
        if better {
            best_iou = Some((iou, shared, cand.id));
        }
    }
    if let Some((_, _, id)) = best_iou {
        return Some(id);
    }
    // Fallback: shared map points.
    let mut best_shared: Option<(usize, u64)> = None;
    for cand in candidates.iter().filter(|c| c.class == obs_class) {
        let shared = shared_point_count(obs_points, cand.cloud);
        if shared < cfg.shared_point_threshold {
            continue;
        }
        let better = match &best_shared {
            None => true,
            Some((bs, bid)) => shared > *bs || (shared == *bs && cand.id < *bid),
        };
        if better {
            best_shared = Some((shared, cand.id));
        }
    }
    best_shared.map(|(_, id)| id)
}

/// One landmark as seen by the isolated-observation and merge stages.
#[derive(Debug, Clone, Copy)]
pub struct HistoryCandidate<'a> {
    pub id: u64,
    pub class: u32,
    pub history: &'a CentroidHistory,
}

/// Association for observations without previous-frame context: among
/// same-class landmarks whose history is long enough, returns the one that
/// passes the single-sample test with the smallest worst-axis |t|.
pub fn associate_isolated(
    obs_centroid: &Vector3<f64>,
    obs_class: u32,
    landmarks: &[HistoryCandidate<'_>],
    cfg: &AssocConfig,
) -> Result<Option<u64>, AssocError> {
    let mut best: Option<(f64, u64)> = None;
    for cand in landmarks.iter().filter(|c| c.class == obs_class) {
        if cand.history.len() < cfg.min_history {
            continue;
        }
        let t = t_statistic_single(cand.history, obs_centroid)?;
        let crit = cfg.axis_critical(cand.history.len() - 1)?;
        if !t.iter().all(|v| v.abs() <= crit) {
            continue;
        }
        let worst = t.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
        let better = match &best {
            None => true,
            Some((bw, bid)) => worst < *bw || (worst == *bw && cand.id < *bid),
        };
        if better {
            best = Some((worst, cand.id));
        }
    }
    Ok(best.map(|(_, id)| id))
}

/// Duplicate detection: every same-class landmark pair whose histories pass
/// the two-sample test joins a union-find group; the result lists
/// (survivor, absorbed) pairs with the lowest id of each group surviving,
/// sorted for determinism.
pub fn find_merge_pairs(
    landmarks: &[HistoryCandidate<'_>],
    cfg: &AssocConfig,
) -> Result<Vec<(u64, u64)>, AssocError> {
    let mut order: Vec<usize> = (0..landmarks.len()).collect();
    order.sort_by_key(|&i| landmarks[i].id);

    let mut parent: Vec<usize> = (0..order.len()).collect();
    fn find(parent: &mut Vec<usize>, i: usize) -> usize {
        let mut root = i;
        while parent[root] != root {
            root = parent[root];
        }
        let mut cur = i;
        while parent[cur] != root {
            let next = parent[cur];
            parent[cur] = root;
            cur = next;
        }
        root
    }

    for a in 0..order.len() {
        let la = &landmarks[order[a]];
        if la.history.len() < 2 {
            continue;
        }
        for b in (a + 1)..order.len() {
            let lb = &landmarks[order[b]];
            if lb.class != la.class || lb.history.len() < 2 {
                continue;
            }
            if double_sample_pass(la.history, lb.history, cfg)? {
                // Union by lowest index, which is lowest id thanks to the
                // sorted order.
                let (ra, rb) = (find(&mut parent, a), find(&mut parent, b));
                if ra != rb {
                    let (lo, hi) = if ra < rb { (ra, rb) } else { (rb, ra) };
                    parent[hi] = lo;
                }
            }
        }
    }

    let mut pairs = Vec::new();
    for i in 0..order.len() {
        let root = find(&mut parent, i);
        if root != i {
            pairs.push((landmarks[order[root]].id, landmarks[order[i]].id));
        }
    }
    pairs.sort_unstable();
    Ok(pairs)
}
