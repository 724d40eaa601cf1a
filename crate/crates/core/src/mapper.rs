//! Multi-object landmark map.
//!
//! Consumes per-frame detections (bounding box, sparse 3D points, optional
//! line segments), associates them with existing landmarks, accumulates and
//! filters per-landmark point clouds, and periodically refits a superquadric
//! model per landmark. Duplicate landmarks are detected statistically and
//! merged. The resulting map can be evaluated against a set of ground-truth
//! bodies by volumetric IoU.

use std::collections::{BTreeMap, HashSet};
use std::time::Instant;

use nalgebra::Vector3;
use serde::Serialize;

use crate::assoc::{
    associate_interframe, associate_isolated, find_merge_pairs, AssocConfig, AssocError,
    CentroidHistory, HistoryCandidate, InterframeCandidate,
};
use crate::camera::{BBox, CameraFrame, Segment2D};
use crate::outlier::{filter_new_points, filter_outliers, reprojection_filter, EifConfig, OutlierError};
use crate::pose::{centroid, estimate_yaw_lines, estimate_yaw_pca, YawHistory, YawMethod};
use crate::shape_fit::{fit_landmark, FitConfig, FitError};
use crate::superquadric::{iou_3d, ObjectPose, Superquadric};

/// Version stamp written into exported map files.
pub const MAP_FORMAT_VERSION: u32 = 1;

/// Errors raised by the mapping pipeline.
#[derive(Debug)]
pub enum MapError {
    /// Frame ids must be strictly increasing across `process_frame` calls.
    OutOfOrderFrame { got: u64, last: u64 },
    /// An observation's frame id does not match the camera frame.
    FrameMismatch { expected: u64, got: u64 },
    /// A pipeline config field is out of range.
    BadConfig { message: &'static str },
    /// Landmarks handed to `from_landmarks` were not sorted by unique id.
    UnsortedLandmarks,
    /// A map JSON file failed to parse or carried a wrong version.
    BadMapFile { message: String },
    Assoc(AssocError),
    Fit(FitError),
    Outlier(OutlierError),
}

impl std::fmt::Display for MapError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            MapError::OutOfOrderFrame { got, last } => {
                write!(f, "frame id {got} is not after the last processed frame {last}")
            }
            MapError::FrameMismatch { expected, got } => {
                write!(f, "observation carries frame id {got}, camera frame is {expected}")
            }
            MapError::BadConfig { message } => write!(f, "bad pipeline config: {message}"),
            MapError::UnsortedLandmarks => {
                write!(f, "landmarks must be sorted by strictly increasing id")
            }
            MapError::BadMapFile { message } => write!(f, "bad map file: {message}"),
            MapError::Assoc(e) => write!(f, "association failed: {e}"),
            MapError::Fit(e) => write!(f, "model fit failed: {e}"),
            MapError::Outlier(e) => write!(f, "outlier filter failed: {e}"),
        }
    }
}

impl std::error::Error for MapError {}

impl From<AssocError> for MapError {
    fn from(e: AssocError) -> Self {
        MapError::Assoc(e)
    }
}

impl From<FitError> for MapError {
    fn from(e: FitError) -> Self {
        MapError::Fit(e)
    }
}

impl From<OutlierError> for MapError {
    fn from(e: OutlierError) -> Self {
        MapError::Outlier(e)
    }
}

/// One detection in one frame: a labeled box, the sparse points that fell
/// inside it (world frame), and any detected line segments (pixel frame).
#[derive(Debug, Clone)]
pub struct Observation {
    pub frame_id: u64,
    pub class_label: u32,
    pub bbox: BBox,
    pub points_world: Vec<Vector3<f64>>,
    pub segments: Vec<Segment2D>,
}

/// One mapped object: accumulated evidence plus the current model estimate.
#[derive(Debug, Clone)]
pub struct ObjectLandmark {
    pub id: u64,
    pub class_label: u32,
    /// Filtered accumulated world-frame points.
    pub cloud: Vec<Vector3<f64>>,
    /// Per-observation centroids, one entry per associated observation.
    pub centroid_history: CentroidHistory,
    /// Running fused yaw estimate.
    pub yaw_history: YawHistory,
    /// Fitted body; `None` until the cloud first reaches the fit threshold.
    pub model: Option<Superquadric>,
    /// Frame id of the most recent associated observation.
    pub last_assoc_frame: u64,
    /// Bounding box of the most recent associated observation.
    pub last_bbox: BBox,
    /// Current translation estimate (centroid of the filtered cloud).
    pub translation: Vector3<f64>,
}

impl ObjectLandmark {
    /// Number of observations fused into this landmark.
    pub fn n_observations(&self) -> usize {
        self.centroid_history.len()
    }

    /// Current pose estimate: fused yaw plus cloud-centroid translation.
    pub fn current_pose(&self) -> ObjectPose {
        ObjectPose::new(self.yaw_history.value(), self.translation)
            .unwrap_or_else(|_| ObjectPose::identity())
    }
}

/// Pipeline tuning knobs.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct PipelineConfig {
    /// Anomaly-scoring filter applied to accumulated clouds.
    pub eif: EifConfig,
    /// Superquadric fit settings.
    pub fit: FitConfig,
    /// Association thresholds and test significance.
    pub assoc: AssocConfig,
    /// Refit all eligible landmarks every this many processed frames.
    pub refit_interval: u64,
    /// Run the duplicate-merge pass every this many processed frames.
    pub merge_interval: u64,
    /// Minimum cloud size before a model is fitted.
    pub min_points_for_fit: usize,
    /// Minimum points an unassociated observation needs to found a landmark.
    pub new_landmark_min_points: usize,
    /// Longest detection gap (in frames) the overlap stage bridges: a
    /// landmark last seen within this many frames stays eligible for
    /// bounding-box matching. Short dropouts stay on the overlap path,
    /// whose boxes barely move between nearby frames; the history test
    /// only handles genuinely long disappearances.
    pub max_assoc_gap: u64,
    /// Hard cap on stored points per landmark; over-cap clouds are thinned
    /// on a voxel grid so all observed regions keep representatives.
    pub max_cloud_points: usize,
    /// Pixels added around an observation's box before the reprojection
    /// test, so box-edge noise cannot clip true silhouette points.
    pub reprojection_margin_px: f64,
    /// After each fit, drop points lying more than this fraction beyond
    /// the fitted surface along their ray and refit. Zero disables.
    pub fit_trim_ratio: f64,
    /// Per-class yaw method override; absent classes try line alignment
    /// first and fall back to the planar principal direction.
    pub yaw_method_overrides: BTreeMap<u32, YawMethod>,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            eif: EifConfig::default(),
            fit: FitConfig::default(),
            assoc: AssocConfig::default(),
            refit_interval: 5,
            merge_interval: 20,
            min_points_for_fit: 20,
            new_landmark_min_points: 5,
            max_assoc_gap: 5,
            max_cloud_points: 4000,
            reprojection_margin_px: 8.0,
            fit_trim_ratio: 0.25,
            yaw_method_overrides: BTreeMap::new(),
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), MapError> {
        if self.refit_interval == 0 {
            return Err(MapError::BadConfig { message: "refit_interval must be at least 1" });
        }
        if self.merge_interval == 0 {
            return Err(MapError::BadConfig { message: "merge_interval must be at least 1" });
        }
        if self.min_points_for_fit < crate::shape_fit::MIN_FIT_POINTS {
            return Err(MapError::BadConfig {
                message: "min_points_for_fit is below the solver minimum",
            });
        }
        if self.new_landmark_min_points == 0 {
            return Err(MapError::BadConfig {
                message: "new_landmark_min_points must be at least 1",
            });
        }
        if self.max_assoc_gap == 0 {
            return Err(MapError::BadConfig { message: "max_assoc_gap must be at least 1" });
        }
        if self.max_cloud_points < self.min_points_for_fit {
            return Err(MapError::BadConfig {
                message: "max_cloud_points must not be below min_points_for_fit",
            });
        }
        if !(self.reprojection_margin_px >= 0.0 && self.reprojection_margin_px.is_finite()) {
            return Err(MapError::BadConfig {
                message: "reprojection_margin_px must be finite and non-negative",
            });
        }
        if !(self.fit_trim_ratio >= 0.0 && self.fit_trim_ratio.is_finite()) {
            return Err(MapError::BadConfig {
                message: "fit_trim_ratio must be finite and non-negative",
            });
        }
        self.assoc.validate()?;
        self.fit.validate()?;
        Ok(())
    }
}

/// What happened during one `process_frame` call.
#[derive(Debug, Clone, Default)]
pub struct FrameReport {
    pub frame_id: u64,
    /// `(observation index, landmark id)` for observations bound to an
    /// existing landmark.
    pub associations: Vec<(usize, u64)>,
    /// Ids of landmarks created this frame.
    pub created: Vec<u64>,
    /// `(surviving id, absorbed id)` merges executed this frame.
    pub merged: Vec<(u64, u64)>,
    /// Observations ignored (too few points to found a landmark, or empty).
    pub skipped_observations: usize,
    /// Points dropped because they reproject outside the current box.
    pub removed_by_reprojection: usize,
    /// Points dropped by the anomaly-scoring filter.
    pub removed_by_scoring: usize,
    /// Model refits that failed this frame (previous model is kept).
    pub refit_failures: usize,
    /// Wall-clock milliseconds spent in the per-observation front stage.
    pub front_stage_ms: f64,
}

/// The landmark map.
///
/// Landmarks are kept sorted by strictly increasing id; ids are never
/// reused. Frame ids must strictly increase across `process_frame` calls.
#[derive(Debug, Clone, Default)]
pub struct ObjectMap {
    landmarks: Vec<ObjectLandmark>,
    frame_count: u64,
    last_frame_id: Option<u64>,
    next_id: u64,
}

impl ObjectMap {
    pub fn new() -> Self {
        ObjectMap { landmarks: Vec::new(), frame_count: 0, last_frame_id: None, next_id: 1 }
    }

    /// Builds a map directly from landmarks (ids must be sorted and unique).
    /// Intended for reloading exported maps for evaluation.
    pub fn from_landmarks(landmarks: Vec<ObjectLandmark>) -> Result<Self, MapError> {
        for pair in landmarks.windows(2) {
            if pair[0].id >= pair[1].id {
                return Err(MapError::UnsortedLandmarks);
            }
        }
        let next_id = landmarks.last().map_or(1, |l| l.id + 1);
        Ok(ObjectMap { landmarks, frame_count: 0, last_frame_id: None, next_id })
    }

    pub fn landmarks(&self) -> &[ObjectLandmark] {
        &self.landmarks
    }

    pub fn len(&self) -> usize {
        self.landmarks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.landmarks.is_empty()
    }

    /// Number of frames processed so far.
    pub fn frame_count(&self) -> u64 {
        self.frame_count
    }

    pub fn landmark(&self, id: u64) -> Option<&ObjectLandmark> {
        self.index_of(id).map(|i| &self.landmarks[i])
    }

    fn index_of(&self, id: u64) -> Option<usize> {
        self.landmarks.binary_search_by_key(&id, |l| l.id).ok()
    }

    /// Ingests one frame of observations.
    ///
    /// Per observation: bind to a landmark by previous-frame box overlap,
    /// else by the statistical position test, else found a new landmark when
    /// enough points are present. The bound landmark absorbs the points,
    /// is re-filtered (reprojection gate, then anomaly scoring), capped,
    /// and its pose estimate is refreshed. Eligible landmarks are refitted
    /// on the configured cadence (and immediately when a cloud first
    /// reaches the fit threshold); the merge pass runs on its own cadence.
    pub fn process_frame(
        &mut self,
        frame: &CameraFrame,
        observations: &[Observation],
        cfg: &PipelineConfig,
    ) -> Result<FrameReport, MapError> {
        cfg.validate()?;
        if let Some(last) = self.last_frame_id {
            if frame.frame_id <= last {
                return Err(MapError::OutOfOrderFrame { got: frame.frame_id, last });
            }
        }
        for obs in observations {
            if obs.frame_id != frame.frame_id {
                return Err(MapError::FrameMismatch {
                    expected: frame.frame_id,
                    got: obs.frame_id,
                });
            }
        }
        self.last_frame_id = Some(frame.frame_id);
        self.frame_count += 1;

        let mut report = FrameReport { frame_id: frame.frame_id, ..FrameReport::default() };
        let front_start = Instant::now();

        for (obs_idx, obs) in observations.iter().enumerate() {
            // Box-overlap stage first: landmarks seen within the gap window
            // are eligible. A landmark bound earlier in this frame has a
            // zero gap, so it can never be bound twice in one frame.
            let interframe: Vec<InterframeCandidate<'_>> = self
                .landmarks
                .iter()
                .filter(|l| {
                    l.last_assoc_frame < frame.frame_id
                        && frame.frame_id - l.last_assoc_frame <= cfg.max_assoc_gap
                })
                .map(|l| InterframeCandidate {
                    id: l.id,
                    class: l.class_label,
                    prev_bbox: l.last_bbox,
                    cloud: &l.cloud,
                })
                .collect();
            let mut assoc_id = associate_interframe(
                obs.class_label,
                &obs.bbox,
                &obs.points_world,
                &interframe,
                &cfg.assoc,
            );

            if assoc_id.is_none() && !obs.points_world.is_empty() {
                let obs_centroid =
                    centroid(&obs.points_world).expect("non-empty observation has a centroid");
                let history_cands: Vec<HistoryCandidate<'_>> = self
                    .landmarks
                    .iter()
                    .map(|l| HistoryCandidate {
                        id: l.id,
                        class: l.class_label,
                        history: &l.centroid_history,
                    })
                    .collect();
                assoc_id =
                    associate_isolated(&obs_centroid, obs.class_label, &history_cands, &cfg.assoc)?;
            }

            let id = match assoc_id {
                Some(id) => {
                    report.associations.push((obs_idx, id));
                    id
                }
                None => {
                    if obs.points_world.len() < cfg.new_landmark_min_points {
                        report.skipped_observations += 1;
                        continue;
                    }
                    let id = self.next_id;
                    self.next_id += 1;
                    self.landmarks.push(ObjectLandmark {
                        id,
                        class_label: obs.class_label,
                        cloud: Vec::new(),
                        centroid_history: CentroidHistory::new(),
                        yaw_history: YawHistory::new(),
                        model: None,
                        last_assoc_frame: frame.frame_id,
                        last_bbox: obs.bbox,
                        translation: Vector3::zeros(),
                    });
                    report.created.push(id);
                    id
                }
            };

            let li = self.index_of(id).expect("bound landmark exists");
            apply_observation(&mut self.landmarks[li], frame, obs, cfg, &mut report)?;
        }
        report.front_stage_ms = front_start.elapsed().as_secs_f64() * 1000.0;

        // Back stage: cadenced refits plus an immediate first fit whenever a
        // cloud has just reached the threshold, so a landmark never sits
        // above the threshold without a model.
        let cadence_refit = self.frame_count % cfg.refit_interval == 0;
        for li in 0..self.landmarks.len() {
            let lm = &self.landmarks[li];
            let eligible = lm.cloud.len() >= cfg.min_points_for_fit;
            if eligible && (cadence_refit || lm.model.is_none()) && !self.refit(li, cfg) {
                report.refit_failures += 1;
            }
        }

        if self.frame_count % cfg.merge_interval == 0 {
            report.merged = self.merge_pass(cfg)?;
        }
        Ok(report)
    }

    /// Refits one landmark; returns false (keeping the old model) on failure.
    ///
    /// After a successful fit, points lying more than `fit_trim_ratio`
    /// beyond the fitted surface along their ray from the body center are
    /// set aside and the fit repeats on the survivors, up to
    /// [`TRIM_ROUNDS`] times, peeling drifting noise off the outer hull
    /// (measurement noise sits well inside the ratio). The working set
    /// lives only inside this call: every refit starts from the full
    /// stored cloud, so a skewed early model cannot erode points for good.
    fn refit(&mut self, li: usize, cfg: &PipelineConfig) -> bool {
        let lm = &mut self.landmarks[li];
        let yaw = lm.yaw_history.value();
        let mut working = quantile_clip(&lm.cloud, yaw, &lm.translation, EXTENT_TAIL);
        let mut fitted = match fit_recentred(&working, yaw, &lm.translation, &cfg.fit) {
            Some(sq) => sq,
            None => return false,
        };
        for _ in 0..TRIM_ROUNDS {
            if cfg.fit_trim_ratio <= 0.0 {
                break;
            }
            let keep: Vec<bool> =
                working.iter().map(|p| overshoot(&fitted, p) <= cfg.fit_trim_ratio).collect();
            if keep.iter().all(|&k| k) {
                break;
            }
            let mut trimmed = working.clone();
            apply_mask(&mut trimmed, &keep);
            match fit_recentred(&trimmed, yaw, &lm.translation, &cfg.fit) {
                Some(sq) => {
                    working = trimmed;
                    fitted = sq;
                }
                None => break,
            }
        }
        lm.model = Some(fitted);
        true
    }

    /// One duplicate-detection pass followed by the resulting merges.
    fn merge_pass(&mut self, cfg: &PipelineConfig) -> Result<Vec<(u64, u64)>, MapError> {
        let candidates: Vec<HistoryCandidate<'_>> = self
            .landmarks
            .iter()
            .map(|l| HistoryCandidate { id: l.id, class: l.class_label, history: &l.centroid_history })
            .collect();
        let pairs = find_merge_pairs(&candidates, &cfg.assoc)?;
        for &(keep_id, absorb_id) in &pairs {
            self.execute_merge(keep_id, absorb_id, cfg);
        }
        Ok(pairs)
    }

    /// Pools the absorbed landmark into the survivor: clouds are unioned and
    /// re-filtered, histories concatenated, pose re-estimated, model refit.
    fn execute_merge(&mut self, keep_id: u64, absorb_id: u64, cfg: &PipelineConfig) {
        let (Some(ai), Some(_)) = (self.index_of(absorb_id), self.index_of(keep_id)) else {
            return;
        };
        let absorbed = self.landmarks.remove(ai);
        let ki = self.index_of(keep_id).expect("survivor exists");
        let lm = &mut self.landmarks[ki];

        lm.cloud.extend_from_slice(&absorbed.cloud);
        lm.centroid_history = CentroidHistory::merged(&lm.centroid_history, &absorbed.centroid_history);
        lm.yaw_history = YawHistory::merged(&lm.yaw_history, &absorbed.yaw_history);
        if absorbed.last_assoc_frame > lm.last_assoc_frame {
            lm.last_assoc_frame = absorbed.last_assoc_frame;
            lm.last_bbox = absorbed.last_bbox;
        }

        let eif_cfg = EifConfig {
            seed: cfg.eif.seed ^ (keep_id << 32) ^ absorb_id ^ self.frame_count.rotate_left(16),
            ..cfg.eif.clone()
        };
        if let Ok(outcome) = filter_outliers(&lm.cloud, &eif_cfg) {
            apply_mask(&mut lm.cloud, &outcome.keep);
        }
        cap_cloud(&mut lm.cloud, cfg.max_cloud_points);
        if let Ok(c) = centroid(&lm.cloud) {
            lm.translation = c;
        }
        if lm.cloud.len() >= cfg.min_points_for_fit {
            let _ = self.refit(ki, cfg);
        }
    }

    /// Final pass once all frames are in: re-filter and refit every landmark,
    /// then merge duplicates until none remain.
    pub fn finalize(&mut self, cfg: &PipelineConfig) -> Result<(), MapError> {
        cfg.validate()?;
        for li in 0..self.landmarks.len() {
            let lm = &mut self.landmarks[li];
            let eif_cfg = EifConfig {
                // Distinct stream from the per-frame filters.
                seed: cfg.eif.seed ^ (lm.id << 32) ^ 0xF1A1_F1A1,
                ..cfg.eif.clone()
            };
            if let Ok(outcome) = filter_outliers(&lm.cloud, &eif_cfg) {
                apply_mask(&mut lm.cloud, &outcome.keep);
            }
            cap_cloud(&mut lm.cloud, cfg.max_cloud_points);
            if let Ok(c) = centroid(&lm.cloud) {
                lm.translation = c;
            }
            if lm.cloud.len() >= cfg.min_points_for_fit {
                let _ = self.refit(li, cfg);
            }
        }
        // Each merge removes a landmark, so this terminates.
        loop {
            let pairs = self.merge_pass(cfg)?;
            if pairs.is_empty() {
                break;
            }
        }
        Ok(())
    }
}

/// Fuses one observation into its landmark: history push, point
/// accumulation, reprojection gate, anomaly filter, cap, pose refresh.
fn apply_observation(
    lm: &mut ObjectLandmark,
    frame: &CameraFrame,
    obs: &Observation,
    cfg: &PipelineConfig,
    report: &mut FrameReport,
) -> Result<(), MapError> {
    let vetted = lm.cloud.len();
    if !obs.points_world.is_empty() {
        let obs_centroid =
            centroid(&obs.points_world).expect("non-empty observation has a centroid");
        lm.centroid_history.push(obs_centroid);
        lm.cloud.extend_from_slice(&obs.points_world);
    }

    // The reprojection test covers the whole cloud: a point on the body
    // projects inside the body's silhouette from every viewpoint, so points
    // that land outside the box as the camera moves are noise and each new
    // viewpoint is another chance to catch them. The margin keeps box-edge
    // noise from clipping true silhouette points on repeated passes.
    let m = cfg.reprojection_margin_px;
    let test_box = BBox::new(
        obs.bbox.xmin - m,
        obs.bbox.ymin - m,
        obs.bbox.xmax + m,
        obs.bbox.ymax + m,
    )
    .expect("inflating a valid box keeps it valid");
    let keep = reprojection_filter(&lm.cloud, frame, &test_box);
    let vetted = keep[..vetted].iter().filter(|&&k| k).count();
    let before = lm.cloud.len();
    apply_mask(&mut lm.cloud, &keep);
    report.removed_by_reprojection += before - lm.cloud.len();

    // The score-based filter judges density relative to the rest of the
    // cloud, so the forest trains on the whole cloud but only the points
    // appended this frame are scored and evicted: every point is vetted
    // exactly once, on entry. Re-scoring accepted points on every pass
    // compounds — sparsely observed but true regions (undersides, briefly
    // seen faces) thin out a little more each frame until only the densest
    // face survives.
    let eif_cfg = EifConfig {
        // Independent deterministic stream per (frame, landmark).
        seed: cfg.eif.seed ^ frame.frame_id ^ (lm.id << 32),
        ..cfg.eif.clone()
    };
    let outcome = filter_new_points(&lm.cloud, vetted, &eif_cfg)?;
    let before = lm.cloud.len();
    apply_mask(&mut lm.cloud, &outcome.keep);
    report.removed_by_scoring += before - lm.cloud.len();

    cap_cloud(&mut lm.cloud, cfg.max_cloud_points);

    if let Ok(c) = centroid(&lm.cloud) {
        lm.translation = c;
    }
    let est = match cfg.yaw_method_overrides.get(&lm.class_label) {
        Some(YawMethod::LineAlignment) => {
            estimate_yaw_lines(&obs.segments, &lm.translation, frame).ok()
        }
        Some(YawMethod::Pca) => estimate_yaw_pca(&lm.cloud).ok(),
        None => estimate_yaw_lines(&obs.segments, &lm.translation, frame)
            .ok()
            .or_else(|| estimate_yaw_pca(&lm.cloud).ok()),
    };
    if let Some(e) = est {
        lm.yaw_history.update(e.yaw);
    }

    lm.last_assoc_frame = frame.frame_id;
    lm.last_bbox = obs.bbox;
    Ok(())
}

/// Trim-and-refit rounds per refit call.
const TRIM_ROUNDS: usize = 3;

/// Fraction of points shaved off each end of each axis before fitting.
const EXTENT_TAIL: f64 = 0.02;

/// Neighborhood radius for the tail support test, as a fraction of the
/// largest core (inter-quantile) span.
const TAIL_SUPPORT_RADIUS: f64 = 0.04;

/// A tail point needs this many neighbors inside the support radius to
/// extend the kept extent.
const TAIL_SUPPORT_NEIGHBORS: usize = 3;

/// Keeps the points inside a per-axis box in the yaw-aligned frame. Each
/// axis starts from its `tail`-quantile extent — the fitted size tracks the
/// cloud extent, and a handful of drifted points would otherwise set it on
/// their own — and then widens to cover clipped points that have enough 3D
/// neighbors. The distinction matters for lightly observed but real faces:
/// the end caps of an elongated body hold only a couple percent of a
/// view-accumulated cloud, so a plain quantile cut shaves them off and
/// halves the recovered long axis. Real faces are coherent clusters, while
/// drifted points scatter through a volume and find no support.
fn quantile_clip(
    points: &[Vector3<f64>],
    yaw: f64,
    anchor: &Vector3<f64>,
    tail: f64,
) -> Vec<Vector3<f64>> {
    let n = points.len();
    let cut = (n as f64 * tail).floor() as usize;
    if cut == 0 {
        return points.to_vec();
    }
    let yaw_frame = match ObjectPose::new(yaw, *anchor) {
        Ok(p) => p,
        Err(_) => return points.to_vec(),
    };
    let obj: Vec<Vector3<f64>> = points.iter().map(|p| yaw_frame.world_to_object(p)).collect();
    let mut lo = Vector3::zeros();
    let mut hi = Vector3::zeros();
    let mut core_span = 0.0f64;
    for axis in 0..3 {
        let mut coords: Vec<f64> = obj.iter().map(|q| q[axis]).collect();
        coords.sort_by(f64::total_cmp);
        lo[axis] = coords[cut];
        hi[axis] = coords[n - 1 - cut];
        core_span = core_span.max(hi[axis] - lo[axis]);
    }
    let r2 = (TAIL_SUPPORT_RADIUS * core_span).powi(2);
    let candidates: Vec<&Vector3<f64>> = obj
        .iter()
        .filter(|q| (0..3).any(|a| q[a] < lo[a] || q[a] > hi[a]))
        .collect();
    // Support must come from fellow tail points: a real face forms its own
    // cluster out there, while a stray point leaning on the in-box shell
    // does not get to drag the extent with it.
    let supported = |q: &Vector3<f64>| -> bool {
        let mut others = 0;
        for o in &candidates {
            if (*o - q).norm_squared() <= r2 {
                others += 1;
                // The point itself always matches once.
                if others > TAIL_SUPPORT_NEIGHBORS {
                    return true;
                }
            }
        }
        false
    };
    let mut elo = lo;
    let mut ehi = hi;
    for q in &candidates {
        if supported(q) {
            elo = elo.inf(q);
            ehi = ehi.sup(q);
        }
    }
    points
        .iter()
        .zip(&obj)
        .filter(|(_, q)| (0..3).all(|a| q[a] >= elo[a] && q[a] <= ehi[a]))
        .map(|(p, _)| *p)
        .collect()
}

/// Fits a body centered on the cloud's extent midpoint in the yaw-aligned
/// frame. The extent-based size covers the points symmetrically about the
/// body center, which the cloud's raw centroid does not provide: a moving
/// camera sees tops far more often than undersides, so the centroid sits
/// off-center and a body centered there leaves the thin side uncovered.
/// `anchor` is any point near the object (the running centroid works);
/// only the yaw matters for the frame in which the midpoint is taken.
fn fit_recentred(
    points: &[Vector3<f64>],
    yaw: f64,
    anchor: &Vector3<f64>,
    cfg: &FitConfig,
) -> Option<Superquadric> {
    if points.is_empty() {
        return None;
    }
    let yaw_frame = ObjectPose::new(yaw, *anchor).ok()?;
    let mut lo = yaw_frame.world_to_object(&points[0]);
    let mut hi = lo;
    for p in &points[1..] {
        let q = yaw_frame.world_to_object(p);
        lo = lo.inf(&q);
        hi = hi.sup(&q);
    }
    let center = yaw_frame.object_to_world(&((lo + hi) / 2.0));
    let pose = ObjectPose::new(yaw, center).ok()?;
    fit_landmark(points, &pose, cfg).ok()
}

/// How far `p` sits beyond the body surface along its ray from the body
/// center, as a fraction of the surface distance: 0 on the surface,
/// negative inside. Scaling a point by `s` scales the inside-outside value
/// by `s^(2/eps1)`, so the factor to the surface is `F^(eps1/2)`.
fn overshoot(body: &Superquadric, p: &Vector3<f64>) -> f64 {
    let f = body.inside_outside(p);
    if !f.is_finite() {
        return f64::INFINITY;
    }
    f.powf(body.shape.eps1() / 2.0) - 1.0
}

/// Keeps `points[i]` where `keep[i]`.
fn apply_mask(points: &mut Vec<Vector3<f64>>, keep: &[bool]) {
    let mut idx = 0;
    points.retain(|_| {
        let k = keep[idx];
        idx += 1;
        k
    });
}

/// Evenly-spaced deterministic downsample to at most `cap` points.
fn cap_cloud(points: &mut Vec<Vector3<f64>>, cap: usize) {
    let len = points.len();
    if len <= cap || cap == 0 {
        return;
    }
    // Thin on a voxel grid, keeping the first point seen in each occupied
    // cell. Scanning oldest-first gives every region a stable representative:
    // sparsely revisited areas (a long body's end caps, a briefly seen
    // underside) survive indefinitely, while densely re-observed faces shed
    // duplicates. A recency or stride rule here quietly erodes whichever
    // faces the camera has not seen lately. The grid coarsens until the
    // survivors fit the cap.
    let mut lo = Vector3::repeat(f64::INFINITY);
    let mut hi = Vector3::repeat(f64::NEG_INFINITY);
    for p in points.iter() {
        lo = lo.inf(p);
        hi = hi.sup(p);
    }
    let span = (hi - lo).max();
    if span.is_finite() && span > 0.0 {
        let mut cell = span / 256.0;
        for _ in 0..32 {
            let mut seen = HashSet::with_capacity(len);
            let mut kept = Vec::with_capacity(cap + 1);
            for p in points.iter() {
                let key = (
                    ((p.x - lo.x) / cell).floor() as i64,
                    ((p.y - lo.y) / cell).floor() as i64,
                    ((p.z - lo.z) / cell).floor() as i64,
                );
                if seen.insert(key) {
                    kept.push(*p);
                    if kept.len() > cap {
                        break;
                    }
                }
            }
            if kept.len() <= cap {
                *points = kept;
                return;
            }
            cell *= 2.0;
        }
    }
    // Coincident or non-finite geometry: fall back to a plain stride.
    let mut out = Vec::with_capacity(cap);
    for i in 0..cap {
        out.push(points[i * len / cap]);
    }
    *points = out;
}

/// One matched landmark/truth pair in an evaluation.
#[derive(Debug, Clone, Copy, Serialize)]
pub struct MatchRecord {
    pub landmark_id: u64,
    pub truth_index: usize,
    pub iou: f64,
}

/// Map-vs-truth comparison summary.
#[derive(Debug, Clone, Serialize)]
pub struct EvalReport {
    pub matches: Vec<MatchRecord>,
    /// Matched IoUs summed over ground-truth objects and divided by the
    /// truth count, so missed objects pull the mean down.
    pub mean_iou: f64,
    pub landmark_count: usize,
    pub truth_count: usize,
    pub unmatched_landmarks: Vec<u64>,
    pub unmatched_truths: Vec<usize>,
}

fn pair_seed(seed: u64, landmark_id: u64, truth_index: u64) -> u64 {
    seed ^ landmark_id.wrapping_mul(0x9E37_79B9_7F4A_7C15)
        ^ truth_index.wrapping_mul(0xC2B2_AE3D_27D4_EB4F)
}

/// Scores the map against ground-truth bodies.
///
/// Every modeled landmark is compared with every truth by sampled
/// volumetric IoU; pairs are then matched greedily in descending IoU with
/// each landmark and each truth used at most once. Zero-overlap pairs never
/// match.
pub fn evaluate(map: &ObjectMap, truths: &[Superquadric], n_samples: usize, seed: u64) -> EvalReport {
    let modeled: Vec<(u64, &Superquadric)> = map
        .landmarks()
        .iter()
        .filter_map(|l| l.model.as_ref().map(|m| (l.id, m)))
        .collect();

    let mut pairs: Vec<(f64, usize, u64)> = Vec::new();
    for (ti, truth) in truths.iter().enumerate() {
        for &(id, model) in &modeled {
            let iou = iou_3d(model, truth, n_samples, pair_seed(seed, id, ti as u64));
            if iou > 0.0 {
                pairs.push((iou, ti, id));
            }
        }
    }
    // Descending IoU; ties resolved toward the lower truth index, then the
    // lower landmark id, for a deterministic assignment.
    pairs.sort_by(|a, b| {
        b.0.partial_cmp(&a.0).expect("IoU is finite").then(a.1.cmp(&b.1)).then(a.2.cmp(&b.2))
    });

    let mut truth_used = vec![false; truths.len()];
    let mut landmark_used: BTreeMap<u64, bool> = modeled.iter().map(|&(id, _)| (id, false)).collect();
    let mut matches = Vec::new();
    for &(iou, ti, id) in &pairs {
        if truth_used[ti] || landmark_used[&id] {
            continue;
        }
        truth_used[ti] = true;
        landmark_used.insert(id, true);
        matches.push(MatchRecord { landmark_id: id, truth_index: ti, iou });
    }
    matches.sort_by_key(|m| m.truth_index);

    let mean_iou = if truths.is_empty() {
        0.0
    } else {
        matches.iter().map(|m| m.iou).sum::<f64>() / truths.len() as f64
    };
    let matched_ids: Vec<u64> = matches.iter().map(|m| m.landmark_id).collect();
    let unmatched_landmarks: Vec<u64> = map
        .landmarks()
        .iter()
        .map(|l| l.id)
        .filter(|id| !matched_ids.contains(id))
        .collect();
    let unmatched_truths: Vec<usize> =
        (0..truths.len()).filter(|ti| !truth_used[*ti]).collect();

    EvalReport {
        matches,
        mean_iou,
        landmark_count: map.len(),
        truth_count: truths.len(),
        unmatched_landmarks,
        unmatched_truths,
    }
}

#[derive(Serialize)]
struct LandmarkRecord<'a> {
    id: u64,
    class: u32,
    superquadric: Option<&'a Superquadric>,
    n_points: usize,
    n_observations: usize,
}

#[derive(Serialize)]
struct MapRecord<'a> {
    format_version: u32,
    frame_count: u64,
    landmarks: Vec<LandmarkRecord<'a>>,
}

/// Serializes the map as pretty JSON. Landmarks appear in id order;
/// unmodeled landmarks carry a `null` superquadric.
pub fn map_to_json(map: &ObjectMap) -> String {
    let record = MapRecord {
        format_version: MAP_FORMAT_VERSION,
        frame_count: map.frame_count(),
        landmarks: map
            .landmarks()
            .iter()
            .map(|l| LandmarkRecord {
                id: l.id,
                class: l.class_label,
                superquadric: l.model.as_ref(),
                n_points: l.cloud.len(),
                n_observations: l.n_observations(),
            })
            .collect(),
    };
    serde_json::to_string_pretty(&record).expect("map serializes")
}

/// Evaluation matches as CSV with an `object_id,truth_id,iou3d` header.
pub fn eval_to_csv(report: &EvalReport) -> String {
    let mut out = String::from("object_id,truth_id,iou3d\n");
    for m in &report.matches {
        out.push_str(&format!("{},{},{}\n", m.landmark_id, m.truth_index, m.iou));
    }
    out
}

/// Evaluation summary as pretty JSON.
pub fn eval_to_json(report: &EvalReport) -> String {
    serde_json::to_string_pretty(report).expect("report serializes")
}

#[derive(serde::Deserialize)]
struct LandmarkRecordOwned {
    id: u64,
    class: u32,
    superquadric: Option<Superquadric>,
}

#[derive(serde::Deserialize)]
struct MapRecordOwned {
    format_version: u32,
    landmarks: Vec<LandmarkRecordOwned>,
}

/// Parses a map JSON produced by [`map_to_json`] back into an [`ObjectMap`].
///
/// Only identity and fitted models survive the round trip — accumulated
/// clouds and observation histories are not part of the export — so the
/// result serves evaluation and re-export, not continued frame processing.
pub fn map_from_json(json: &str) -> Result<ObjectMap, MapError> {
    let record: MapRecordOwned = serde_json::from_str(json)
        .map_err(|e| MapError::BadMapFile { message: e.to_string() })?;
    if record.format_version != MAP_FORMAT_VERSION {
        return Err(MapError::BadMapFile {
            message: format!(
                "unsupported format_version {}, expected {MAP_FORMAT_VERSION}",
                record.format_version
            ),
        });
    }
    let placeholder_box = BBox::new(0.0, 0.0, 1.0, 1.0).expect("unit box is valid");
    let landmarks = record
        .landmarks
        .into_iter()
        .map(|r| {
            let translation =
                r.superquadric.as_ref().map_or_else(Vector3::zeros, |m| m.pose.translation());
            ObjectLandmark {
                id: r.id,
                class_label: r.class,
                cloud: Vec::new(),
                centroid_history: CentroidHistory::new(),
                yaw_history: YawHistory::new(),
                model: r.superquadric,
                last_assoc_frame: 0,
                last_bbox: placeholder_box,
                translation,
            }
        })
        .collect();
    ObjectMap::from_landmarks(landmarks)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camera::Intrinsics;
    use crate::superquadric::{ShapeParams, SizeParams};
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn test_intrinsics() -> Intrinsics {
        Intrinsics::new(500.0, 500.0, 320.0, 240.0, 640, 480).unwrap()
    }

    fn looking_frame(frame_id: u64) -> CameraFrame {
        CameraFrame::look_at(
            frame_id,
            Vector3::new(0.0, -4.0, 3.0),
            Vector3::new(0.0, 0.0, 0.3),
            test_intrinsics(),
        )
    }

    fn body(ax: f64, ay: f64, az: f64, e1: f64, e2: f64, yaw: f64, t: [f64; 3]) -> Superquadric {
        Superquadric::new(
            SizeParams::new(ax, ay, az).unwrap(),
            ShapeParams::new(e1, e2).unwrap(),
            ObjectPose::new(yaw, Vector3::new(t[0], t[1], t[2])).unwrap(),
        )
    }

    /// Deterministic noisy surface observation of `sq` as seen in `frame`.
    fn observe(
        sq: &Superquadric,
        frame: &CameraFrame,
        n_points: usize,
        sigma: f64,
        rng: &mut ChaCha8Rng,
    ) -> Observation {
        let surface = sq.sample_surface(8, 16).unwrap();
        let mut points = Vec::with_capacity(n_points);
        for i in 0..n_points {
            let base = surface[(i * 7) % surface.len()].position;
            let jitter = Vector3::new(
                rng.random_range(-1.0..1.0) * sigma,
                rng.random_range(-1.0..1.0) * sigma,
                rng.random_range(-1.0..1.0) * sigma,
            );
            points.push(base + jitter);
        }
        let mut lo = nalgebra::Vector2::new(f64::INFINITY, f64::INFINITY);
        let mut hi = nalgebra::Vector2::new(f64::NEG_INFINITY, f64::NEG_INFINITY);
        for p in &points {
            let px = crate::camera::project_point(frame, p).expect("test points visible");
            lo = lo.inf(&px);
            hi = hi.sup(&px);
        }
        // Pad so the noisy silhouette reprojects inside.
        let bbox = BBox::new(lo.x - 5.0, lo.y - 5.0, hi.x + 5.0, hi.y + 5.0).unwrap();
        Observation {
            frame_id: frame.frame_id,
            class_label: 1,
            bbox,
            points_world: points,
            segments: Vec::new(),
        }
    }

    fn quiet_config() -> PipelineConfig {
        PipelineConfig {
            // Small trees keep the tests quick; scoring stays effective.
            eif: EifConfig { n_trees: 40, subsample_size: 64, ..EifConfig::default() },
            ..PipelineConfig::default()
        }
    }

    #[test]
    fn cold_start_creates_landmark_without_model() {
        let mut map = ObjectMap::new();
        let cfg = quiet_config();
        let sq = body(0.4, 0.3, 0.3, 1.0, 1.0, 0.0, [0.0, 0.0, 0.3]);
        let frame = looking_frame(1);
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let obs = observe(&sq, &frame, 10, 0.005, &mut rng);

        let report = map.process_frame(&frame, &[obs], &cfg).unwrap();
        assert_eq!(report.created, vec![1]);
        assert!(report.associations.is_empty());
        assert_eq!(map.len(), 1);
        let lm = map.landmark(1).unwrap();
        assert!(lm.model.is_none(), "10 points is below the fit threshold");
        assert_eq!(lm.n_observations(), 1);
        assert!(!lm.cloud.is_empty());
    }

    #[test]
    fn model_appears_when_cloud_first_reaches_threshold() {
        let mut map = ObjectMap::new();
        let cfg = quiet_config();
        let sq = body(0.4, 0.3, 0.3, 1.0, 1.0, 0.0, [0.0, 0.0, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(12);

        for frame_id in 1..=4 {
            let frame = looking_frame(frame_id);
            let obs = observe(&sq, &frame, 15, 0.005, &mut rng);
            map.process_frame(&frame, &[obs], &cfg).unwrap();
            let lm = map.landmark(1).unwrap();
            if lm.cloud.len() >= cfg.min_points_for_fit {
                assert!(
                    lm.model.is_some(),
                    "cloud of {} crossed the threshold without a model",
                    lm.cloud.len()
                );
            }
        }
        assert_eq!(map.len(), 1, "repeat views of one object must not spawn landmarks");
        assert!(map.landmark(1).unwrap().model.is_some());
    }

    #[test]
    fn out_of_order_frames_are_rejected() {
        let mut map = ObjectMap::new();
        let cfg = quiet_config();
        let frame5 = looking_frame(5);
        map.process_frame(&frame5, &[], &cfg).unwrap();

        for bad in [5, 3] {
            let err = map.process_frame(&looking_frame(bad), &[], &cfg).unwrap_err();
            match err {
                MapError::OutOfOrderFrame { got, last } => {
                    assert_eq!(got, bad);
                    assert_eq!(last, 5);
                }
                other => panic!("expected OutOfOrderFrame, got {other:?}"),
            }
        }
    }

    #[test]
    fn observation_frame_mismatch_is_rejected() {
        let mut map = ObjectMap::new();
        let cfg = quiet_config();
        let frame = looking_frame(2);
        let sq = body(0.3, 0.3, 0.3, 1.0, 1.0, 0.0, [0.0, 0.0, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let mut obs = observe(&sq, &frame, 8, 0.004, &mut rng);
        obs.frame_id = 7;
        let err = map.process_frame(&frame, &[obs], &cfg).unwrap_err();
        assert!(matches!(err, MapError::FrameMismatch { expected: 2, got: 7 }));
    }

    #[test]
    fn interframe_association_keeps_two_objects_apart() {
        let mut map = ObjectMap::new();
        let cfg = quiet_config();
        let a = body(0.35, 0.3, 0.3, 1.0, 1.0, 0.0, [-1.2, 0.0, 0.3]);
        let b = body(0.35, 0.3, 0.3, 1.0, 1.0, 0.0, [1.2, 0.0, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(14);

        let frame = looking_frame(1);
        let obs =
            vec![observe(&a, &frame, 12, 0.005, &mut rng), observe(&b, &frame, 12, 0.005, &mut rng)];
        let report = map.process_frame(&frame, &obs, &cfg).unwrap();
        assert_eq!(report.created, vec![1, 2]);

        // Same objects next frame, reversed order: ids must follow objects.
        let frame = looking_frame(2);
        let obs =
            vec![observe(&b, &frame, 12, 0.005, &mut rng), observe(&a, &frame, 12, 0.005, &mut rng)];
        let report = map.process_frame(&frame, &obs, &cfg).unwrap();
        assert!(report.created.is_empty());
        assert_eq!(report.associations, vec![(0, 2), (1, 1)]);
    }

    #[test]
    fn isolated_association_bridges_a_detection_gap() {
        let mut map = ObjectMap::new();
        let cfg = quiet_config();
        let sq = body(0.4, 0.3, 0.3, 1.0, 1.0, 0.0, [0.0, 0.0, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(15);

        for frame_id in 1..=3 {
            let frame = looking_frame(frame_id);
            let obs = observe(&sq, &frame, 12, 0.005, &mut rng);
            map.process_frame(&frame, &[obs], &cfg).unwrap();
        }
        // The object reappears long after the overlap stage's gap window,
        // so only the history test can reclaim it.
        let frame = looking_frame(3 + cfg.max_assoc_gap + 7);
        let obs = observe(&sq, &frame, 12, 0.005, &mut rng);
        let report = map.process_frame(&frame, &[obs], &cfg).unwrap();
        assert_eq!(report.associations, vec![(0, 1)]);
        assert!(report.created.is_empty());
        assert_eq!(map.len(), 1);
    }

    #[test]
    fn tiny_unmatched_observation_is_skipped() {
        let mut map = ObjectMap::new();
        let cfg = quiet_config();
        let frame = looking_frame(1);
        let obs = Observation {
            frame_id: 1,
            class_label: 3,
            bbox: BBox::new(100.0, 100.0, 120.0, 120.0).unwrap(),
            points_world: vec![
                Vector3::new(0.0, 0.0, 0.3),
                Vector3::new(0.01, 0.0, 0.3),
                Vector3::new(0.0, 0.01, 0.3),
            ],
            segments: Vec::new(),
        };
        let report = map.process_frame(&frame, &[obs], &cfg).unwrap();
        assert_eq!(report.skipped_observations, 1);
        assert!(map.is_empty());
    }

    /// Drives the map so that the same physical object legitimately spawns a
    /// duplicate landmark: two sightings, a gap too long for the overlap
    /// stage's window and too short a history for the isolated test.
    fn build_duplicates(map: &mut ObjectMap, cfg: &PipelineConfig, gap_start: u64) -> u64 {
        let sq = body(0.4, 0.3, 0.3, 1.0, 1.0, 0.0, [0.0, 0.0, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        for frame_id in [gap_start, gap_start + 1] {
            let frame = looking_frame(frame_id);
            let obs = observe(&sq, &frame, 12, 0.002, &mut rng);
            map.process_frame(&frame, &[obs], &cfg.clone()).unwrap();
        }
        // History length 2 is below the isolated-test minimum, so after the
        // gap this founds a second landmark for the same object.
        let gap_end = gap_start + 2 + cfg.max_assoc_gap;
        let mut last = gap_start + 1;
        for frame_id in [gap_end, gap_end + 1] {
            let frame = looking_frame(frame_id);
            let obs = observe(&sq, &frame, 12, 0.002, &mut rng);
            map.process_frame(&frame, &[obs], cfg).unwrap();
            last = frame_id;
        }
        last
    }

    #[test]
    fn merge_pass_unifies_duplicate_landmarks() {
        let mut map = ObjectMap::new();
        let mut cfg = quiet_config();
        cfg.assoc.min_history = 3;
        cfg.merge_interval = 4; // fires on the 4th processed frame
        let last = build_duplicates(&mut map, &cfg, 1);
        assert_eq!(last, 4 + cfg.max_assoc_gap);

        assert_eq!(map.len(), 1, "merge should leave a single landmark");
        let lm = map.landmark(1).expect("lowest id survives");
        assert_eq!(lm.n_observations(), 4, "histories concatenate");
    }

    #[test]
    fn finalize_merges_to_fixpoint_and_fits_pending_landmarks() {
        let mut map = ObjectMap::new();
        let mut cfg = quiet_config();
        cfg.assoc.min_history = 3;
        cfg.merge_interval = 1000; // keep merges out of process_frame
        build_duplicates(&mut map, &cfg, 1);
        assert_eq!(map.len(), 2, "gap plus short history duplicates the landmark");

        map.finalize(&cfg).unwrap();
        assert_eq!(map.len(), 1);
        let lm = map.landmark(1).unwrap();
        assert_eq!(lm.n_observations(), 4);
        assert!(lm.model.is_some(), "pooled cloud clears the fit threshold");
    }

    #[test]
    fn cloud_respects_the_point_cap() {
        let mut map = ObjectMap::new();
        let mut cfg = quiet_config();
        cfg.max_cloud_points = 60;
        let sq = body(0.4, 0.3, 0.3, 1.0, 1.0, 0.0, [0.0, 0.0, 0.3]);
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        for frame_id in 1..=8 {
            let frame = looking_frame(frame_id);
            let obs = observe(&sq, &frame, 30, 0.005, &mut rng);
            map.process_frame(&frame, &[obs], &cfg).unwrap();
            assert!(map.landmark(1).unwrap().cloud.len() <= 60);
        }
    }

    #[test]
    fn replay_is_deterministic() {
        let run = || {
            let mut map = ObjectMap::new();
            let cfg = quiet_config();
            let a = body(0.35, 0.3, 0.3, 1.0, 1.0, 0.0, [-1.2, 0.0, 0.3]);
            let b = body(0.3, 0.25, 0.4, 0.3, 0.3, 0.4, [1.2, 0.0, 0.4]);
            let mut rng = ChaCha8Rng::seed_from_u64(18);
            let mut reports = Vec::new();
            for frame_id in 1..=8 {
                let frame = looking_frame(frame_id);
                let obs = vec![
                    observe(&a, &frame, 14, 0.005, &mut rng),
                    observe(&b, &frame, 14, 0.005, &mut rng),
                ];
                let r = map.process_frame(&frame, &obs, &cfg).unwrap();
                reports.push((r.associations, r.created, r.merged));
            }
            map.finalize(&cfg).unwrap();
            (map_to_json(&map), reports)
        };
        let (json1, reports1) = run();
        let (json2, reports2) = run();
        assert_eq!(json1, json2, "identical input must replay byte-identically");
        assert_eq!(reports1, reports2);
    }

    #[test]
    fn evaluate_matches_greedily_and_averages_over_truths() {
        let truth_a = body(0.4, 0.3, 0.3, 1.0, 1.0, 0.0, [0.0, 0.0, 0.3]);
        let truth_b = body(0.3, 0.3, 0.5, 0.3, 0.3, 0.0, [2.0, 0.0, 0.5]);
        // Model 1 matches truth A exactly; model 2 overlaps A but worse;
        // model 3 matches truth B.
        let lm = |id: u64, m: Superquadric| ObjectLandmark {
            id,
            class_label: 1,
            cloud: Vec::new(),
            centroid_history: CentroidHistory::new(),
            yaw_history: YawHistory::new(),
            model: Some(m),
            last_assoc_frame: 0,
            last_bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            translation: m.pose.translation(),
        };
        let map = ObjectMap::from_landmarks(vec![
            lm(1, truth_a),
            lm(2, body(0.4, 0.3, 0.3, 1.0, 1.0, 0.0, [0.15, 0.0, 0.3])),
            lm(3, truth_b),
        ])
        .unwrap();

        let report = evaluate(&map, &[truth_a, truth_b], 60_000, 99);
        assert_eq!(report.matches.len(), 2);
        assert_eq!(report.matches[0].landmark_id, 1);
        assert_eq!(report.matches[0].truth_index, 0);
        assert!(report.matches[0].iou > 0.98);
        assert_eq!(report.matches[1].landmark_id, 3);
        assert_eq!(report.matches[1].truth_index, 1);
        assert_eq!(report.unmatched_landmarks, vec![2]);
        assert!(report.unmatched_truths.is_empty());
        let expect = (report.matches[0].iou + report.matches[1].iou) / 2.0;
        assert!((report.mean_iou - expect).abs() < 1e-12);
    }

    #[test]
    fn evaluate_empty_map_scores_zero() {
        let truth = body(0.4, 0.3, 0.3, 1.0, 1.0, 0.0, [0.0, 0.0, 0.3]);
        let report = evaluate(&ObjectMap::new(), &[truth], 10_000, 1);
        assert_eq!(report.mean_iou, 0.0);
        assert_eq!(report.landmark_count, 0);
        assert_eq!(report.unmatched_truths, vec![0]);
    }

    #[test]
    fn exports_have_the_documented_shape() {
        let truth = body(0.4, 0.3, 0.3, 1.0, 1.0, 0.1, [0.0, 0.0, 0.3]);
        let pending = ObjectLandmark {
            id: 2,
            class_label: 5,
            cloud: vec![Vector3::zeros(); 4],
            centroid_history: CentroidHistory::new(),
            yaw_history: YawHistory::new(),
            model: None,
            last_assoc_frame: 0,
            last_bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            translation: Vector3::zeros(),
        };
        let modeled = ObjectLandmark { id: 1, model: Some(truth), ..pending.clone() };
        let map = ObjectMap::from_landmarks(vec![modeled, pending]).unwrap();

        let json = map_to_json(&map);
        let v: serde_json::Value = serde_json::from_str(&json).unwrap();
        assert_eq!(v["format_version"], 1);
        assert_eq!(v["landmarks"][0]["id"], 1);
        assert_eq!(v["landmarks"][0]["superquadric"]["ax"], 0.4);
        assert!(v["landmarks"][1]["superquadric"].is_null());

        let report = evaluate(&map, &[truth], 20_000, 5);
        let csv = eval_to_csv(&report);
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("object_id,truth_id,iou3d"));
        let row = lines.next().unwrap();
        assert!(row.starts_with("1,0,"));

        let ejson: serde_json::Value = serde_json::from_str(&eval_to_json(&report)).unwrap();
        assert_eq!(ejson["truth_count"], 1);
        assert_eq!(ejson["landmark_count"], 2);
    }

    #[test]
    fn map_json_round_trips_models() {
        let truth = body(0.4, 0.3, 0.25, 0.3, 0.8, 0.4, [1.0, -0.5, 0.25]);
        let modeled = ObjectLandmark {
            id: 3,
            class_label: 2,
            // Clouds are not exported, so an empty one keeps the re-export
            // comparison below exact.
            cloud: Vec::new(),
            centroid_history: CentroidHistory::new(),
            yaw_history: YawHistory::new(),
            model: Some(truth),
            last_assoc_frame: 9,
            last_bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            translation: Vector3::new(1.0, -0.5, 0.25),
        };
        let map = ObjectMap::from_landmarks(vec![modeled]).unwrap();
        let reloaded = map_from_json(&map_to_json(&map)).unwrap();
        assert_eq!(reloaded.len(), 1);
        let lm = reloaded.landmark(3).unwrap();
        assert_eq!(lm.class_label, 2);
        let m = lm.model.as_ref().unwrap();
        assert_eq!(m.size.ax(), 0.4);
        assert_eq!(m.shape.eps2(), 0.8);
        assert_eq!(m.pose.yaw(), 0.4);
        // Identical models evaluate to identical JSON on re-export.
        assert_eq!(map_to_json(&reloaded), map_to_json(&map));

        assert!(matches!(
            map_from_json("{\"format_version\": 99, \"landmarks\": []}"),
            Err(MapError::BadMapFile { .. })
        ));
        assert!(matches!(map_from_json("not json"), Err(MapError::BadMapFile { .. })));
    }

    #[test]
    fn pipeline_config_round_trips_through_json() {
        let mut cfg = PipelineConfig::default();
        cfg.yaw_method_overrides.insert(2, crate::pose::YawMethod::Pca);
        cfg.refit_interval = 7;
        let json = serde_json::to_string(&cfg).unwrap();
        // Integer map keys become JSON strings; deserialization must undo that.
        assert!(json.contains("\"2\":\"pca\""));
        let back: PipelineConfig = serde_json::from_str(&json).unwrap();
        assert_eq!(back.refit_interval, 7);
        assert_eq!(back.yaw_method_overrides.get(&2), Some(&crate::pose::YawMethod::Pca));
        assert_eq!(back.fit.grid_steps, cfg.fit.grid_steps);
        assert_eq!(back.eif.score_threshold, cfg.eif.score_threshold);
        assert_eq!(back.assoc.min_history, cfg.assoc.min_history);
    }

    #[test]
    fn from_landmarks_rejects_unsorted_ids() {
        let mk = |id: u64| ObjectLandmark {
            id,
            class_label: 0,
            cloud: Vec::new(),
            centroid_history: CentroidHistory::new(),
            yaw_history: YawHistory::new(),
            model: None,
            last_assoc_frame: 0,
            last_bbox: BBox::new(0.0, 0.0, 1.0, 1.0).unwrap(),
            translation: Vector3::zeros(),
        };
        assert!(matches!(
            ObjectMap::from_landmarks(vec![mk(2), mk(1)]),
            Err(MapError::UnsortedLandmarks)
        ));
        assert!(matches!(
            ObjectMap::from_landmarks(vec![mk(2), mk(2)]),
            Err(MapError::UnsortedLandmarks)
        ));
    }

    #[test]
    fn config_validation_rejects_bad_values() {
        let mut cfg = PipelineConfig::default();
        cfg.refit_interval = 0;
        assert!(matches!(cfg.validate(), Err(MapError::BadConfig { .. })));
        let mut cfg = PipelineConfig::default();
        cfg.min_points_for_fit = 4;
        assert!(matches!(cfg.validate(), Err(MapError::BadConfig { .. })));
        let mut cfg = PipelineConfig::default();
        cfg.max_cloud_points = 10;
        assert!(matches!(cfg.validate(), Err(MapError::BadConfig { .. })));
        assert!(PipelineConfig::default().validate().is_ok());
    }
}
