//! The synthetic trajectory generation pipeline.
//!
//! One run samples a camera pose, a viewing frustum, waypoints inside it and
//! a constant travel speed; solves the minimum-snap trajectory through the
//! waypoints; samples it at the drawn frame rate; and projects the samples to
//! pixels. A run is accepted only if every sample stays inside the frustum
//! and consecutive pixel displacements stay within configured bounds
//! (near-stationary leading/trailing frames, an artifact of the rest-to-rest
//! boundary conditions, are trimmed before that check). Rejected runs are
//! resampled until the requested number of tracks exists.
//!
//! Every run derives its own RNG stream from (seed, run index), so datasets
//! are pure functions of the config and identical whether generated serially
//! or in parallel.

use crate::camera::{CameraRig, Extrinsics, Frustum, Intrinsics};
use crate::polysnap::{allocate_times, solve_min_snap, MinSnapConfig, Waypoint};
use crate::util::{fnv1a, parse_field, parse_kv, stream_rng};
use nalgebra::Vector3;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use std::io::{BufRead, Write};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum DatagenError {
    #[error("invalid generation config: {0}")]
    InvalidConfig(String),
    #[error("waypoint rejection budget exceeded after {attempts} draws (mis-configured frustum?)")]
    RejectionBudgetExceeded { attempts: usize },
    #[error("overall acceptance below 0.1% ({accepted} of {attempts} runs)")]
    AcceptanceTooLow { attempts: u64, accepted: u64 },
    #[error("dataset io: {0}")]
    Io(#[from] std::io::Error),
    #[error("dataset line {line}: {source}")]
    BadRecord {
        line: usize,
        source: serde_json::Error,
    },
}

/// Why a run was rejected. The generator resamples on any of these.
#[derive(Debug, Clone, PartialEq)]
pub enum Rejection {
    /// A sample fell behind the camera.
    BehindCamera { frame: usize },
    /// A sample left the frustum (outside the image or the depth range).
    OutOfBounds { frame: usize },
    /// An interior pixel step shorter than the configured minimum.
    StepTooSmall { frame: usize, step_px: f64 },
    /// A pixel step longer than the configured maximum.
    StepTooLarge { frame: usize, step_px: f64 },
    /// The minimum-snap solve failed.
    SolverFailure(String),
    /// Fewer frames than the configured minimum after trimming.
    TooShort { frames: usize },
}

impl Rejection {
    pub fn label(&self) -> &'static str {
        match self {
            Rejection::BehindCamera { .. } => "behind-camera",
            Rejection::OutOfBounds { .. } => "out-of-bounds",
            Rejection::StepTooSmall { .. } => "step-too-small",
            Rejection::StepTooLarge { .. } => "step-too-large",
            Rejection::SolverFailure(_) => "solver-failure",
            Rejection::TooShort { .. } => "too-short",
        }
    }
}

/// A failed run: either an ordinary rejection (resample) or a fatal budget
/// error that must propagate.
#[derive(Debug, Error)]
pub enum TrackFailure {
    #[error("rejected: {0:?}")]
    Rejected(Rejection),
    #[error(transparent)]
    Budget(DatagenError),
}

/// All knobs of the generation pipeline, with defaults matching the synthetic
/// camera and sampling ranges the datasets are built with.
#[derive(Debug, Clone, PartialEq)]
pub struct GenConfig {
    pub intrinsics: Intrinsics,
    /// Camera height above ground, uniform range in meters.
    pub height_range: (f64, f64),
    /// Upward pitch of the optical axis, uniform range in degrees.
    pub inclination_range_deg: (f64, f64),
    pub d_near: f64,
    pub d_far: f64,
    /// Inclusive integer range of waypoints per trajectory.
    pub waypoint_count: (u32, u32),
    /// Constant travel speed, uniform range in m/s.
    pub speed_range: (f64, f64),
    /// Camera frame rate, uniform range in fps.
    pub frame_rate_range: (f64, f64),
    /// Number of accepted tracks a dataset must contain.
    pub track_count: usize,
    /// Observation noise applied to conditioning inputs downstream, px.
    pub noise_sigma: f64,
    /// Acceptance bounds on consecutive pixel displacements.
    pub min_step_px: f64,
    pub max_step_px: f64,
    /// Minimum frames a track must keep after trimming.
    pub min_track_frames: usize,
    /// Minimum distance between consecutive waypoints, meters.
    pub min_waypoint_spacing: f64,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            intrinsics: Intrinsics::default(),
            height_range: (1.0, 2.0),
            inclination_range_deg: (10.0, 20.0),
            d_near: 10.0,
            d_far: 30.0,
            waypoint_count: (3, 7),
            speed_range: (1.0, 8.0),
            frame_rate_range: (10.0, 20.0),
            track_count: 1000,
            noise_sigma: 1.5,
            min_step_px: 0.5,
            max_step_px: 60.0,
            min_track_frames: 20,
            min_waypoint_spacing: 0.5,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<(), DatagenError> {
        let err = |msg: &str| Err(DatagenError::InvalidConfig(msg.to_string()));
        if !(self.height_range.0 > 0.0 && self.height_range.1 >= self.height_range.0) {
            return err("height range");
        }
        if self.inclination_range_deg.1 < self.inclination_range_deg.0 {
            return err("inclination range");
        }
        if !(self.d_near > 0.0 && self.d_near < self.d_far) {
            return err("near/far range");
        }
        if self.waypoint_count.0 < 2 || self.waypoint_count.1 < self.waypoint_count.0 {
            return err("waypoint count range");
        }
        if !(self.speed_range.0 > 0.0 && self.speed_range.1 >= self.speed_range.0) {
            return err("speed range");
        }
        if !(self.frame_rate_range.0 > 0.0 && self.frame_rate_range.1 >= self.frame_rate_range.0) {
            return err("frame rate range");
        }
        if self.track_count == 0 {
            return err("track count");
        }
        if self.noise_sigma.is_nan() || self.noise_sigma < 0.0 {
            return err("noise sigma");
        }
        if !(self.min_step_px >= 0.0 && self.max_step_px > self.min_step_px) {
            return err("step bounds");
        }
        if self.min_track_frames < 2 {
            return err("min track frames");
        }
        if self.min_waypoint_spacing.is_nan() || self.min_waypoint_spacing <= 0.0 {
            return err("waypoint spacing");
        }
        Ok(())
    }

    /// Canonical flat key/value rendering; also the on-disk config format.
    pub fn to_config_string(&self) -> String {
        let k = &self.intrinsics;
        format!(
            "# uavtraj generation config\n\
             # camera: pinhole, no distortion; world z-up; camera yaw/roll = 0\n\
             # trajectories: order-7 piecewise polynomials, 8 coefficients per\n\
             # segment-channel over normalized segment time\n\
             focal_px = {}\nprincipal_x = {}\nprincipal_y = {}\n\
             image_width = {}\nimage_height = {}\n\
             height_min = {}\nheight_max = {}\n\
             inclination_min_deg = {}\ninclination_max_deg = {}\n\
             d_near = {}\nd_far = {}\n\
             waypoints_min = {}\nwaypoints_max = {}\n\
             speed_min = {}\nspeed_max = {}\n\
             fps_min = {}\nfps_max = {}\n\
             track_count = {}\nnoise_sigma = {}\n\
             min_step_px = {}\nmax_step_px = {}\n\
             min_track_frames = {}\nmin_waypoint_spacing = {}\n\
             seed = {}\n",
            k.focal_px,
            k.principal_x,
            k.principal_y,
            k.width,
            k.height,
            self.height_range.0,
            self.height_range.1,
            self.inclination_range_deg.0,
            self.inclination_range_deg.1,
            self.d_near,
            self.d_far,
            self.waypoint_count.0,
            self.waypoint_count.1,
            self.speed_range.0,
            self.speed_range.1,
            self.frame_rate_range.0,
            self.frame_rate_range.1,
            self.track_count,
            self.noise_sigma,
            self.min_step_px,
            self.max_step_px,
            self.min_track_frames,
            self.min_waypoint_spacing,
            self.seed,
        )
    }

    /// Parse the flat key/value format. Unlisted keys keep their defaults;
    /// unknown keys are an error.
    pub fn from_config_str(text: &str) -> Result<Self, DatagenError> {
        let mut cfg = GenConfig::default();
        for (line, key, value) in
            parse_kv(text).map_err(DatagenError::InvalidConfig)?
        {
            let set = |slot: &mut f64| parse_field(line, &key, &value).map(|v| *slot = v);
            match key.as_str() {
                "focal_px" => set(&mut cfg.intrinsics.focal_px),
                "principal_x" => set(&mut cfg.intrinsics.principal_x),
                "principal_y" => set(&mut cfg.intrinsics.principal_y),
                "image_width" => set(&mut cfg.intrinsics.width),
                "image_height" => set(&mut cfg.intrinsics.height),
                "height_min" => set(&mut cfg.height_range.0),
                "height_max" => set(&mut cfg.height_range.1),
                "inclination_min_deg" => set(&mut cfg.inclination_range_deg.0),
                "inclination_max_deg" => set(&mut cfg.inclination_range_deg.1),
                "d_near" => set(&mut cfg.d_near),
                "d_far" => set(&mut cfg.d_far),
                "waypoints_min" => parse_field(line, &key, &value).map(|v| cfg.waypoint_count.0 = v),
                "waypoints_max" => parse_field(line, &key, &value).map(|v| cfg.waypoint_count.1 = v),
                "speed_min" => set(&mut cfg.speed_range.0),
                "speed_max" => set(&mut cfg.speed_range.1),
                "fps_min" => set(&mut cfg.frame_rate_range.0),
                "fps_max" => set(&mut cfg.frame_rate_range.1),
                "track_count" => parse_field(line, &key, &value).map(|v| cfg.track_count = v),
                "noise_sigma" => set(&mut cfg.noise_sigma),
                "min_step_px" => set(&mut cfg.min_step_px),
                "max_step_px" => set(&mut cfg.max_step_px),
                "min_track_frames" => {
                    parse_field(line, &key, &value).map(|v| cfg.min_track_frames = v)
                }
                "min_waypoint_spacing" => set(&mut cfg.min_waypoint_spacing),
                "seed" => parse_field(line, &key, &value).map(|v| cfg.seed = v),
                _ => Err(format!("line {line}: unknown key `{key}`")),
            }
            .map_err(DatagenError::InvalidConfig)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, DatagenError> {
        Self::from_config_str(&std::fs::read_to_string(path)?)
    }

    pub fn save(&self, path: &Path) -> Result<(), DatagenError> {
        Ok(std::fs::write(path, self.to_config_string())?)
    }

    /// Stable hash of the full config, embedded in every generated record.
    pub fn config_hash(&self) -> u64 {
        fnv1a(self.to_config_string().as_bytes())
    }
}

/// One generated or ingested trajectory in image space.
#[derive(Debug, Clone, PartialEq)]
pub struct ImageTrack {
    pub id: u64,
    pub fps: f64,
    pub camera: CameraRig,
    pub points_px: Vec<[f64; 2]>,
    /// Ground-truth 3D positions aligned with `points_px` (synthetic tracks).
    pub points_world: Option<Vec<[f64; 3]>>,
    pub seed: u64,
    pub config_hash: u64,
}

#[derive(Serialize, Deserialize)]
struct TrackRecord {
    id: u64,
    fps: f64,
    camera: CameraRecord,
    points_px: Vec<[f64; 2]>,
    points_world: Option<Vec<[f64; 3]>>,
    seed: u64,
    config_hash: u64,
}

/// Camera fields as persisted: pixels for intrinsics, meters/radians for
/// extrinsics.
#[derive(Serialize, Deserialize)]
struct CameraRecord {
    f: f64,
    px: f64,
    py: f64,
    #[serde(rename = "W")]
    w: f64,
    #[serde(rename = "H")]
    h: f64,
    height: f64,
    inclination: f64,
}

impl From<&ImageTrack> for TrackRecord {
    fn from(t: &ImageTrack) -> Self {
        TrackRecord {
            id: t.id,
            fps: t.fps,
            camera: CameraRecord {
                f: t.camera.intrinsics.focal_px,
                px: t.camera.intrinsics.principal_x,
                py: t.camera.intrinsics.principal_y,
                w: t.camera.intrinsics.width,
                h: t.camera.intrinsics.height,
                height: t.camera.extrinsics.height_m,
                inclination: t.camera.extrinsics.inclination_rad,
            },
            points_px: t.points_px.clone(),
            points_world: t.points_world.clone(),
            seed: t.seed,
            config_hash: t.config_hash,
        }
    }
}

impl From<TrackRecord> for ImageTrack {
    fn from(r: TrackRecord) -> Self {
        ImageTrack {
            id: r.id,
            fps: r.fps,
            camera: CameraRig::new(
                Intrinsics {
                    focal_px: r.camera.f,
                    principal_x: r.camera.px,
                    principal_y: r.camera.py,
                    width: r.camera.w,
                    height: r.camera.h,
                },
                Extrinsics {
                    height_m: r.camera.height,
                    inclination_rad: r.camera.inclination,
                },
            ),
            points_px: r.points_px,
            points_world: r.points_world,
            seed: r.seed,
            config_hash: r.config_hash,
        }
    }
}

/// Scene parameters drawn for one run.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SceneSample {
    pub rig: CameraRig,
    pub frame_rate: f64,
    pub speed: f64,
    pub waypoint_count: usize,
}

fn uniform(rng: &mut impl Rng, range: (f64, f64)) -> f64 {
    if range.0 == range.1 {
        range.0
    } else {
        rng.random_range(range.0..range.1)
    }
}

/// Draw camera pose, frame rate, speed and waypoint count. The draw order is
/// fixed and part of the determinism contract.
pub fn sample_scene(rng: &mut impl Rng, config: &GenConfig) -> SceneSample {
    let height = uniform(rng, config.height_range);
    let inclination = uniform(rng, config.inclination_range_deg).to_radians();
    let frame_rate = uniform(rng, config.frame_rate_range);
    let speed = uniform(rng, config.speed_range);
    let waypoint_count =
        rng.random_range(config.waypoint_count.0..=config.waypoint_count.1) as usize;
    SceneSample {
        rig: CameraRig::new(
            config.intrinsics,
            Extrinsics {
                height_m: height,
                inclination_rad: inclination,
            },
        ),
        frame_rate,
        speed,
        waypoint_count,
    }
}

/// Uniform point in the frustum volume by rejection from its bounding box.
/// `budget` is shared across draws and decremented per attempt.
pub fn sample_point_in_frustum(
    rng: &mut impl Rng,
    frustum: &Frustum,
    budget: &mut usize,
) -> Result<Vector3<f64>, DatagenError> {
    let (lo, hi) = frustum.aabb();
    let start = *budget;
    while *budget > 0 {
        *budget -= 1;
        let p = Vector3::new(
            rng.random_range(lo.x..hi.x),
            rng.random_range(lo.y..hi.y),
            rng.random_range(lo.z..hi.z),
        );
        if frustum.contains(&p) {
            return Ok(p);
        }
    }
    Err(DatagenError::RejectionBudgetExceeded { attempts: start })
}

const WAYPOINT_DRAW_BUDGET: usize = 100_000;

/// Sample `count` waypoints uniformly inside the frustum with consecutive
/// points at least `min_spacing` apart. Yaw is zero.
pub fn sample_waypoints(
    rng: &mut impl Rng,
    frustum: &Frustum,
    count: usize,
    min_spacing: f64,
) -> Result<Vec<Waypoint>, DatagenError> {
    let mut budget = WAYPOINT_DRAW_BUDGET;
    let mut points: Vec<Waypoint> = Vec::with_capacity(count);
    while points.len() < count {
        let p = sample_point_in_frustum(rng, frustum, &mut budget)?;
        if let Some(prev) = points.last() {
            if (p - prev.position).norm() < min_spacing {
                continue;
            }
        }
        points.push(Waypoint::new(p, 0.0).expect("frustum points are finite"));
    }
    Ok(points)
}

/// Sample times t = i / fps covering [0, total]; the end point is included
/// when it falls on the grid.
pub fn sample_count(total_duration: f64, fps: f64) -> usize {
    (total_duration * fps + 1e-9).floor() as usize + 1
}

/// Run the full pipeline for one run index. See the module docs for the
/// acceptance rules.
pub fn generate_track(config: &GenConfig, run_index: u64) -> Result<ImageTrack, TrackFailure> {
    let mut rng = stream_rng(config.seed, run_index);
    generate_track_with_rng(&mut rng, config, run_index)
}

fn generate_track_with_rng(
    rng: &mut impl Rng,
    config: &GenConfig,
    run_index: u64,
) -> Result<ImageTrack, TrackFailure> {
    let scene = sample_scene(rng, config);
    let frustum = scene
        .rig
        .frustum(config.d_near, config.d_far)
        .map_err(|e| TrackFailure::Budget(DatagenError::InvalidConfig(e.to_string())))?;
    let waypoints = sample_waypoints(
        rng,
        &frustum,
        scene.waypoint_count,
        config.min_waypoint_spacing,
    )
    .map_err(TrackFailure::Budget)?;

    let reject = |r: Rejection| TrackFailure::Rejected(r);
    let timeline = allocate_times(&waypoints, scene.speed)
        .map_err(|e| reject(Rejection::SolverFailure(e.to_string())))?;
    let trajectory = solve_min_snap(&waypoints, &timeline, &MinSnapConfig::default())
        .map_err(|e| reject(Rejection::SolverFailure(e.to_string())))?;

    let frames = sample_count(timeline.total(), scene.frame_rate);
    let mut points_px = Vec::with_capacity(frames);
    let mut points_world = Vec::with_capacity(frames);
    for i in 0..frames {
        let t = (i as f64 / scene.frame_rate).min(timeline.total());
        let p = trajectory
            .position(t)
            .map_err(|e| reject(Rejection::SolverFailure(e.to_string())))?;
        let depth = scene.rig.world_to_camera(&p).z;
        if depth <= 1e-9 {
            return Err(reject(Rejection::BehindCamera { frame: i }));
        }
        if !frustum.contains(&p) {
            return Err(reject(Rejection::OutOfBounds { frame: i }));
        }
        let (u, v) = scene
            .rig
            .project(&p)
            .map_err(|_| reject(Rejection::BehindCamera { frame: i }))?;
        points_px.push([u, v]);
        points_world.push([p.x, p.y, p.z]);
    }

    // Rest-to-rest boundaries leave near-zero motion at the ends; trim those
    // frames before enforcing the displacement bounds on the interior.
    let step = |a: [f64; 2], b: [f64; 2]| ((b[0] - a[0]).powi(2) + (b[1] - a[1]).powi(2)).sqrt();
    let mut lo = 0;
    let mut hi = points_px.len();
    while hi - lo >= 2 && step(points_px[lo], points_px[lo + 1]) < config.min_step_px {
        lo += 1;
    }
    while hi - lo >= 2 && step(points_px[hi - 2], points_px[hi - 1]) < config.min_step_px {
        hi -= 1;
    }
    let points_px: Vec<[f64; 2]> = points_px[lo..hi].to_vec();
    let points_world: Vec<[f64; 3]> = points_world[lo..hi].to_vec();

    if points_px.len() < config.min_track_frames {
        return Err(reject(Rejection::TooShort {
            frames: points_px.len(),
        }));
    }
    for (i, pair) in points_px.windows(2).enumerate() {
        let s = step(pair[0], pair[1]);
        if s > config.max_step_px {
            return Err(reject(Rejection::StepTooLarge {
                frame: lo + i,
                step_px: s,
            }));
        }
        if s < config.min_step_px {
            return Err(reject(Rejection::StepTooSmall {
                frame: lo + i,
                step_px: s,
            }));
        }
    }

    Ok(ImageTrack {
        id: run_index,
        fps: scene.frame_rate,
        camera: scene.rig,
        points_px,
        points_world: Some(points_world),
        seed: config.seed,
        config_hash: config.config_hash(),
    })
}

/// The QP of a given run index's plan, for offline inspection.
pub fn qp_for_run(
    config: &GenConfig,
    run_index: u64,
) -> Result<crate::polysnap::QpSystem, DatagenError> {
    let mut rng = stream_rng(config.seed, run_index);
    let scene = sample_scene(&mut rng, config);
    let frustum = scene
        .rig
        .frustum(config.d_near, config.d_far)
        .map_err(|e| DatagenError::InvalidConfig(e.to_string()))?;
    let waypoints = sample_waypoints(
        &mut rng,
        &frustum,
        scene.waypoint_count,
        config.min_waypoint_spacing,
    )?;
    let timeline = allocate_times(&waypoints, scene.speed)
        .map_err(|e| DatagenError::InvalidConfig(e.to_string()))?;
    crate::polysnap::build_qp(&waypoints, &timeline, &MinSnapConfig::default())
        .map_err(|e| DatagenError::InvalidConfig(e.to_string()))
}

/// Per-reason rejection counters for one generation run.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize)]
pub struct RejectionStats {
    pub attempts: u64,
    pub accepted: u64,
    pub behind_camera: u64,
    pub out_of_bounds: u64,
    pub step_too_small: u64,
    pub step_too_large: u64,
    pub solver_failure: u64,
    pub too_short: u64,
}

impl RejectionStats {
    fn record(&mut self, rejection: &Rejection) {
        match rejection {
            Rejection::BehindCamera { .. } => self.behind_camera += 1,
            Rejection::OutOfBounds { .. } => self.out_of_bounds += 1,
            Rejection::StepTooSmall { .. } => self.step_too_small += 1,
            Rejection::StepTooLarge { .. } => self.step_too_large += 1,
            Rejection::SolverFailure(_) => self.solver_failure += 1,
            Rejection::TooShort { .. } => self.too_short += 1,
        }
    }
}

impl std::fmt::Display for RejectionStats {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(f, "attempts:        {}", self.attempts)?;
        writeln!(f, "accepted:        {}", self.accepted)?;
        writeln!(f, "behind-camera:   {}", self.behind_camera)?;
        writeln!(f, "out-of-bounds:   {}", self.out_of_bounds)?;
        writeln!(f, "step-too-small:  {}", self.step_too_small)?;
        writeln!(f, "step-too-large:  {}", self.step_too_large)?;
        writeln!(f, "solver-failure:  {}", self.solver_failure)?;
        write!(f, "too-short:       {}", self.too_short)
    }
}

/// A generated dataset together with its rejection statistics.
#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub tracks: Vec<ImageTrack>,
    pub stats: RejectionStats,
}

const MIN_ATTEMPTS_BEFORE_BUDGET_CHECK: u64 = 2000;

/// Generate `config.track_count` accepted tracks serially.
pub fn generate_dataset(config: &GenConfig) -> Result<Dataset, DatagenError> {
    generate_dataset_with_threads(config, 1)
}

/// Same dataset as [`generate_dataset`], computed with a worker pool. Run
/// outcomes depend only on (seed, run index), so the result is identical.
pub fn generate_dataset_parallel(
    config: &GenConfig,
    threads: usize,
) -> Result<Dataset, DatagenError> {
    generate_dataset_with_threads(config, threads.max(1))
}

fn generate_dataset_with_threads(
    config: &GenConfig,
    threads: usize,
) -> Result<Dataset, DatagenError> {
    config.validate()?;
    let mut tracks = Vec::with_capacity(config.track_count);
    let mut stats = RejectionStats::default();
    let mut next_index: u64 = 0;
    let batch = (threads * 32).max(1);

    while tracks.len() < config.track_count {
        let indices: Vec<u64> = (next_index..next_index + batch as u64).collect();
        next_index += batch as u64;
        let outcomes = run_batch(config, &indices, threads);
        for outcome in outcomes {
            stats.attempts += 1;
            match outcome {
                Ok(track) => {
                    stats.accepted += 1;
                    tracks.push(track);
                }
                Err(TrackFailure::Rejected(r)) => stats.record(&r),
                Err(TrackFailure::Budget(e)) => return Err(e),
            }
            if tracks.len() == config.track_count {
                break;
            }
            if stats.attempts >= MIN_ATTEMPTS_BEFORE_BUDGET_CHECK
                && (stats.accepted as f64) < stats.attempts as f64 * 0.001
            {
                return Err(DatagenError::AcceptanceTooLow {
                    attempts: stats.attempts,
                    accepted: stats.accepted,
                });
            }
        }
    }
    Ok(Dataset { tracks, stats })
}

fn run_batch(
    config: &GenConfig,
    indices: &[u64],
    threads: usize,
) -> Vec<Result<ImageTrack, TrackFailure>> {
    if threads <= 1 || indices.len() <= 1 {
        return indices.iter().map(|&i| generate_track(config, i)).collect();
    }
    let chunk = indices.len().div_ceil(threads);
    std::thread::scope(|scope| {
        let handles: Vec<_> = indices
            .chunks(chunk)
            .map(|part| scope.spawn(move || part.iter().map(|&i| generate_track(config, i)).collect::<Vec<_>>()))
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("generation worker panicked"))
            .collect()
    })
}

/// Add i.i.d. N(0, σ²) noise to every coordinate of a pixel sequence.
pub fn add_pixel_noise(points: &mut [[f64; 2]], sigma: f64, rng: &mut impl Rng) {
    if sigma == 0.0 {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("sigma validated non-negative");
    for p in points {
        p[0] += normal.sample(rng);
        p[1] += normal.sample(rng);
    }
}

/// Noisy copy of a track's pixels. The clean input is left untouched;
/// callers keep it as ground truth.
pub fn add_observation_noise(
    track: &ImageTrack,
    sigma: f64,
    rng: &mut impl Rng,
) -> ImageTrack {
    let mut noisy = track.clone();
    add_pixel_noise(&mut noisy.points_px, sigma, rng);
    noisy
}

/// Re-check every acceptance rule against a persisted track.
pub fn validate_track(track: &ImageTrack, config: &GenConfig) -> Result<(), String> {
    if track.points_px.len() < config.min_track_frames {
        return Err(format!("only {} frames", track.points_px.len()));
    }
    if track
        .points_px
        .iter()
        .any(|p| !p[0].is_finite() || !p[1].is_finite())
    {
        return Err("non-finite pixel".into());
    }
    for (i, pair) in track.points_px.windows(2).enumerate() {
        let s = ((pair[1][0] - pair[0][0]).powi(2) + (pair[1][1] - pair[0][1]).powi(2)).sqrt();
        if s < config.min_step_px {
            return Err(format!("step {i} too small: {s}"));
        }
        if s > config.max_step_px {
            return Err(format!("step {i} too large: {s}"));
        }
    }
    let world = track
        .points_world
        .as_ref()
        .ok_or("missing world points")?;
    if world.len() != track.points_px.len() {
        return Err("world/pixel length mismatch".into());
    }
    let frustum = track
        .camera
        .frustum(config.d_near, config.d_far)
        .map_err(|e| e.to_string())?;
    for (i, (w, px)) in world.iter().zip(&track.points_px).enumerate() {
        let p = Vector3::new(w[0], w[1], w[2]);
        if !frustum.contains(&p) {
            return Err(format!("frame {i} outside frustum"));
        }
        let (u, v) = track.camera.project(&p).map_err(|e| e.to_string())?;
        if (u - px[0]).abs() > 1e-6 || (v - px[1]).abs() > 1e-6 {
            return Err(format!("frame {i} reprojection off: ({u}, {v}) vs {px:?}"));
        }
    }
    Ok(())
}

/// Write one self-contained JSON record per line.
pub fn write_tracks<W: Write>(mut out: W, tracks: &[ImageTrack]) -> Result<(), DatagenError> {
    for track in tracks {
        let record = TrackRecord::from(track);
        serde_json::to_writer(&mut out, &record)
            .map_err(|e| DatagenError::Io(std::io::Error::other(e)))?;
        out.write_all(b"\n")?;
    }
    Ok(())
}

pub fn save_tracks(path: &Path, tracks: &[ImageTrack]) -> Result<(), DatagenError> {
    let file = std::fs::File::create(path)?;
    write_tracks(std::io::BufWriter::new(file), tracks)
}

pub fn read_tracks<R: BufRead>(reader: R) -> Result<Vec<ImageTrack>, DatagenError> {
    let mut tracks = Vec::new();
    for (idx, line) in reader.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: TrackRecord = serde_json::from_str(&line)
            .map_err(|source| DatagenError::BadRecord {
                line: idx + 1,
                source,
            })?;
        tracks.push(record.into());
    }
    Ok(tracks)
}

pub fn load_tracks(path: &Path) -> Result<Vec<ImageTrack>, DatagenError> {
    let file = std::fs::File::open(path)?;
    read_tracks(std::io::BufReader::new(file))
}
