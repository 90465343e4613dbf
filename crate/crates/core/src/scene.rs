//! Synthetic world: UAV trajectories, camera frames, oracle beam labels,
//! sliding-window samples and the train/test split.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use rand::seq::SliceRandom;
use rand::Rng as _;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::phy::BeamCodebook;
use crate::rng::{derive_seed, seeded};

/// Observed frames per sample.
pub const N_FRAMES: usize = 8;
/// Future beams per sample.
pub const HORIZON: usize = 5;
/// Frames + future steps covered by one sample.
pub const WINDOW: usize = N_FRAMES + HORIZON;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SceneError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error("azimuth {0}° outside the camera field of view")]
    OutOfView(f64),
    #[error("sample index {index} out of range ({len} samples)")]
    Index { index: usize, len: usize },
}

/// Degree interval `[lo, hi]`.
pub type Span = [f64; 2];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Obstacle {
    pub azimuth_span: Span,
    pub elevation_span: Span,
    pub brightness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct WorldConfig {
    pub camera_fov: f64,
    /// Elevations mapped to the bottom and top image rows.
    pub camera_elevation_span: Span,
    pub image_width: usize,
    pub image_height: usize,
    pub obstacles: Vec<Obstacle>,
    pub uav_brightness: f64,
    /// Per-sequence UAV elevation is drawn from this interval.
    pub elevation_range: Span,
    /// Per-sequence UAV range (meters) is drawn from this interval.
    pub range_range: Span,
    /// Disc radius is `max(1, round(image_width · disc_scale / range))`.
    pub disc_scale: f64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            camera_fov: 90.0,
            camera_elevation_span: [0.0, 60.0],
            image_width: 64,
            image_height: 64,
            obstacles: Vec::new(),
            uav_brightness: 1.0,
            elevation_range: [10.0, 50.0],
            range_range: [40.0, 120.0],
            disc_scale: 2.0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self, patch_size: Option<usize>) -> Result<(), SceneError> {
        let half = self.camera_fov / 2.0;
        if self.image_width < 2 || self.image_height < 2 {
            return Err(SceneError::Config("image must be at least 2×2".into()));
        }
        if let Some(p) = patch_size {
            if !self.image_width.is_multiple_of(p) || !self.image_height.is_multiple_of(p) {
                return Err(SceneError::Config(alloc::format!(
                    "image {}×{} not divisible by patch size {p}",
                    self.image_width,
                    self.image_height
                )));
            }
        }
        if !(self.camera_elevation_span[0] < self.camera_elevation_span[1]) {
            return Err(SceneError::Config("empty camera elevation span".into()));
        }
        for o in &self.obstacles {
            if o.azimuth_span[0] < -half || o.azimuth_span[1] > half || o.azimuth_span[0] > o.azimuth_span[1] {
                return Err(SceneError::Config("obstacle outside the field of view".into()));
            }
        }
        if self.range_range[0] <= 0.0 || self.range_range[0] > self.range_range[1] {
            return Err(SceneError::Config("range interval must be positive".into()));
        }
        Ok(())
    }

    /// Horizontal angle covered by one pixel column.
    pub fn pixel_pitch(&self) -> f64 {
        self.camera_fov / (self.image_width - 1) as f64
    }

    pub fn column_of(&self, azimuth: f64) -> f64 {
        (azimuth + self.camera_fov / 2.0) / self.camera_fov * (self.image_width - 1) as f64
    }

    pub fn azimuth_of(&self, column: f64) -> f64 {
        column / (self.image_width - 1) as f64 * self.camera_fov - self.camera_fov / 2.0
    }

    pub fn row_of(&self, elevation: f64) -> f64 {
        let [lo, hi] = self.camera_elevation_span;
        (1.0 - (elevation - lo) / (hi - lo)) * (self.image_height - 1) as f64
    }

    pub fn disc_radius(&self, range: f64) -> usize {
        libm::round(self.image_width as f64 * self.disc_scale / range).max(1.0) as usize
    }

    pub fn uav_level(&self) -> u8 {
        level(self.uav_brightness)
    }

    /// Midway between the brightest obstacle and the UAV.
    pub fn detection_threshold(&self) -> u8 {
        let obstacle = self.obstacles.iter().map(|o| level(o.brightness)).max().unwrap_or(0);
        ((u16::from(obstacle) + u16::from(self.uav_level())) / 2) as u8
    }
}

fn level(brightness: f64) -> u8 {
    libm::round(brightness.clamp(0.0, 1.0) * 255.0) as u8
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MotionModel {
    LinearPass,
    Arc,
    WaypointSpline,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TrajectoryConfig {
    pub motion_model: MotionModel,
    /// Degrees of azimuth per timestep; the sign sets the initial direction
    /// of a linear pass.
    pub speed: f64,
    pub jitter_std: f64,
    pub length: usize,
    pub seed: u64,
    /// Initial azimuth (degrees); drawn uniformly when absent.
    #[serde(default)]
    pub start_azimuth: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub azimuth_deg: f64,
    pub elevation_deg: f64,
    pub range_m: f64,
}

/// Folds an unbounded azimuth into `[−half, half]` by reflecting at the edges.
pub fn reflect(azimuth: f64, half: f64) -> f64 {
    let period = 4.0 * half;
    let mut y = (azimuth + half) % period;
    if y < 0.0 {
        y += period;
    }
    if y > 2.0 * half {
        y = period - y;
    }
    y - half
}

fn uniform(rng: &mut crate::rng::Rng, span: Span) -> f64 {
    if span[1] > span[0] {
        rng.random_range(span[0]..span[1])
    } else {
        span[0]
    }
}

/// Deterministic UAV states for one sequence.
pub fn simulate_trajectory(cfg: &TrajectoryConfig, world: &WorldConfig) -> Result<Vec<UavState>, SceneError> {
    if cfg.length == 0 {
        return Err(SceneError::Config("trajectory length must be positive".into()));
    }
    if cfg.jitter_std < 0.0 {
        return Err(SceneError::Config("jitter must be nonnegative".into()));
    }
    let half = world.camera_fov / 2.0;
    let mut rng = seeded(cfg.seed);
    let elevation = uniform(&mut rng, world.elevation_range);
    let range = uniform(&mut rng, world.range_range);
    let start = match cfg.start_azimuth {
        Some(s) => s,
        None => rng.random_range(-half..half),
    };
    let speed = cfg.speed;
    let base: Vec<f64> = match cfg.motion_model {
        MotionModel::LinearPass => (0..cfg.length).map(|t| reflect(start + speed * t as f64, half)).collect(),
        MotionModel::Arc => {
            let amplitude: f64 = rng.random_range(5.0..30.0_f64.min(half));
            let center = start.clamp(-half + amplitude, half - amplitude);
            let omega = speed.abs() / amplitude;
            let phase: f64 = rng.random_range(0.0..core::f64::consts::TAU);
            (0..cfg.length).map(|t| center + amplitude * libm::sin(omega * t as f64 + phase)).collect()
        }
        MotionModel::WaypointSpline => {
            const SEGMENT: usize = 6;
            let reach = speed.abs() * SEGMENT as f64 * 2.0 / core::f64::consts::PI;
            let n_way = cfg.length / SEGMENT + 2;
            let mut way = Vec::with_capacity(n_way);
            way.push(start.clamp(-half, half));
            for i in 1..n_way {
                let step: f64 = rng.random_range(-1.0..=1.0);
                way.push((way[i - 1] + step * reach).clamp(-half, half));
            }
            (0..cfg.length)
                .map(|t| {
                    let (i, u) = (t / SEGMENT, (t % SEGMENT) as f64 / SEGMENT as f64);
                    let s = (1.0 - libm::cos(core::f64::consts::PI * u)) / 2.0;
                    way[i] + (way[i + 1] - way[i]) * s
                })
                .collect()
        }
    };
    let limit = 1.5 * cfg.jitter_std;
    Ok(base
        .into_iter()
        .map(|az| {
            let jitter = if cfg.jitter_std > 0.0 {
                let z: f64 = StandardNormal.sample(&mut rng);
                (z * cfg.jitter_std).clamp(-limit, limit)
            } else {
                0.0
            };
            UavState { azimuth_deg: reflect(az + jitter, half), elevation_deg: elevation, range_m: range }
        })
        .collect())
}

/// 8-bit single-channel image, row-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrayImage {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl GrayImage {
    pub fn new(width: usize, height: usize) -> Self {
        Self { width, height, pixels: vec![0; width * height] }
    }

    pub fn get(&self, x: usize, y: usize) -> u8 {
        self.pixels[y * self.width + x]
    }

    pub fn set(&mut self, x: usize, y: usize, v: u8) {
        self.pixels[y * self.width + x] = v;
    }
}

fn occluded(state: &UavState, o: &Obstacle) -> bool {
    (o.azimuth_span[0]..=o.azimuth_span[1]).contains(&state.azimuth_deg)
        && (o.elevation_span[0]..=o.elevation_span[1]).contains(&state.elevation_deg)
}

/// Draws obstacles, then the UAV as a filled disc unless an obstacle hides it.
pub fn render_frame(state: &UavState, world: &WorldConfig) -> Result<GrayImage, SceneError> {
    let half = world.camera_fov / 2.0;
    if !(state.azimuth_deg.abs() <= half + 1e-9) {
        return Err(SceneError::OutOfView(state.azimuth_deg));
    }
    let (w, h) = (world.image_width, world.image_height);
    let mut img = GrayImage::new(w, h);
    let clamp_col = |c: f64| libm::round(c).clamp(0.0, (w - 1) as f64) as usize;
    let clamp_row = |r: f64| libm::round(r).clamp(0.0, (h - 1) as f64) as usize;
    for o in &world.obstacles {
        let (c0, c1) = (clamp_col(world.column_of(o.azimuth_span[0])), clamp_col(world.column_of(o.azimuth_span[1])));
        let (r0, r1) = (clamp_row(world.row_of(o.elevation_span[1])), clamp_row(world.row_of(o.elevation_span[0])));
        let v = level(o.brightness);
        for y in r0..=r1 {
            for x in c0..=c1 {
                img.set(x, y, v);
            }
        }
    }
    if world.obstacles.iter().any(|o| occluded(state, o)) {
        return Ok(img);
    }
    let cx = libm::round(world.column_of(state.azimuth_deg)) as i64;
    let cy = libm::round(world.row_of(state.elevation_deg)) as i64;
    let r = world.disc_radius(state.range_m) as i64;
    let v = world.uav_level();
    for y in (cy - r).max(0)..=(cy + r).min(h as i64 - 1) {
        for x in (cx - r).max(0)..=(cx + r).min(w as i64 - 1) {
            if (x - cx) * (x - cx) + (y - cy) * (y - cy) <= r * r {
                img.set(x as usize, y as usize, v);
            }
        }
    }
    Ok(img)
}

/// Oracle beam of a unit-gain LoS path at every state's azimuth.
pub fn label_sequence(states: &[UavState], cb: &BeamCodebook) -> Vec<usize> {
    states.iter().map(|s| cb.nearest_beam(s.azimuth_deg.to_radians())).collect()
}

/// Number of 13-step windows in a sequence of length `len`.
pub fn window_count(len: usize) -> usize {
    (len + 1).saturating_sub(WINDOW)
}

/// One training/evaluation example.
#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    /// Frames at `t−7 … t`, oldest first.
    pub frames: Vec<GrayImage>,
    /// Oracle beams at `t+1 … t+5`.
    pub target_beams: Vec<usize>,
    /// Oracle beams at `t−7 … t`.
    pub history_beams: Vec<usize>,
    pub sequence_id: usize,
    pub offset: usize,
}

/// Sliding-window samples of one rendered, labeled sequence.
pub fn window_samples(sequence_id: usize, frames: &[GrayImage], beams: &[usize]) -> Vec<Sample> {
    assert_eq!(frames.len(), beams.len());
    (0..window_count(frames.len()))
        .map(|o| Sample {
            frames: frames[o..o + N_FRAMES].to_vec(),
            target_beams: beams[o + N_FRAMES..o + WINDOW].to_vec(),
            history_beams: beams[o..o + N_FRAMES].to_vec(),
            sequence_id,
            offset: o,
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Test,
}

/// Seeded sample-level shuffle; the first `⌈fraction·n⌉` are train.
pub fn split_assignments(n: usize, train_fraction: f64, seed: u64) -> Vec<Split> {
    assert!(train_fraction > 0.0 && train_fraction < 1.0, "train fraction must lie in (0, 1)");
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut seeded(seed));
    let n_train = libm::ceil(train_fraction * n as f64 - 1e-9) as usize;
    let mut out = vec![Split::Test; n];
    for &i in &order[..n_train.min(n)] {
        out[i] = Split::Train;
    }
    out
}

/// Recipe for many sequences of one scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub name: String,
    /// Tag substituted into the prompt (`UAV`, `V2I`).
    pub scenario_tag: String,
    pub num_sequences: usize,
    pub sequence_length: usize,
    pub motion_models: Vec<MotionModel>,
    /// Candidate speeds in degrees per step; one is drawn per sequence with a
    /// random sign.
    pub speeds: Vec<f64>,
    #[serde(default)]
    pub jitter_std: f64,
    /// Starts are drawn inside `[−fov/2 + margin, fov/2 − margin]`.
    #[serde(default)]
    pub start_margin: f64,
    /// Keep linear passes from reaching the sector edge.
    #[serde(default)]
    pub avoid_edges: bool,
    /// Snap starts and speeds to whole pixel columns.
    #[serde(default)]
    pub pixel_aligned: bool,
}

impl ScenarioConfig {
    /// Per-sequence trajectory recipes; sequence `i` gets a seed derived
    /// from `seed` and `i`.
    pub fn trajectories(&self, world: &WorldConfig, seed: u64) -> Result<Vec<TrajectoryConfig>, SceneError> {
        if self.motion_models.is_empty() || self.speeds.is_empty() {
            return Err(SceneError::Config("scenario needs motion models and speeds".into()));
        }
        if self.sequence_length < WINDOW {
            return Err(SceneError::Config(alloc::format!(
                "sequence length {} shorter than one window ({WINDOW})",
                self.sequence_length
            )));
        }
        let half = world.camera_fov / 2.0;
        let pitch = world.pixel_pitch();
        let mut rng = seeded(seed);
        let mut out = Vec::with_capacity(self.num_sequences);
        for i in 0..self.num_sequences {
            let motion = self.motion_models[rng.random_range(0..self.motion_models.len())];
            let mut speed = self.speeds[rng.random_range(0..self.speeds.len())];
            if rng.random_bool(0.5) {
                speed = -speed;
            }
            let (mut lo, mut hi) = (-half + self.start_margin, half - self.start_margin);
            if self.avoid_edges && motion == MotionModel::LinearPass {
                let travel = speed * (self.sequence_length - 1) as f64;
                if travel > 0.0 {
                    hi -= travel;
                } else {
                    lo -= travel;
                }
            }
            if lo > hi {
                return Err(SceneError::Config("speed too large for the sector".into()));
            }
            let mut start = if hi > lo { rng.random_range(lo..=hi) } else { lo };
            if self.pixel_aligned {
                speed = libm::round(speed / pitch) * pitch;
                let col = libm::round(world.column_of(start))
                    .clamp(libm::ceil(world.column_of(lo)), libm::floor(world.column_of(hi)));
                start = world.azimuth_of(col);
            }
            out.push(TrajectoryConfig {
                motion_model: motion,
                speed,
                jitter_std: self.jitter_std,
                length: self.sequence_length,
                seed: derive_seed(seed, i as u64),
                start_azimuth: Some(start),
            });
        }
        Ok(out)
    }
}

/// A rendered and labeled sequence held in memory.
#[derive(Debug, Clone, PartialEq)]
pub struct Sequence {
    pub id: usize,
    pub states: Vec<UavState>,
    pub frames: Vec<GrayImage>,
    pub beams: Vec<usize>,
}

pub fn generate_sequence(
    id: usize,
    traj: &TrajectoryConfig,
    world: &WorldConfig,
    cb: &BeamCodebook,
) -> Result<Sequence, SceneError> {
    let states = simulate_trajectory(traj, world)?;
    let frames = states.iter().map(|s| render_frame(s, world)).collect::<Result<Vec<_>, _>>()?;
    let beams = label_sequence(&states, cb);
    Ok(Sequence { id, states, frames, beams })
}

/// On-disk dataset description written next to the frames and labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetManifest {
    pub format_version: u32,
    pub scenario: ScenarioConfig,
    pub world: WorldConfig,
    pub codebook: crate::phy::CodebookConfig,
    /// Color channels stored per frame file (1 = PGM grayscale).
    pub channels: u32,
    pub seed: u64,
    pub train_fraction: f64,
    pub split_seed: u64,
    pub sequences: Vec<SequenceEntry>,
    pub samples: Vec<SampleEntry>,
    pub num_train: usize,
    pub num_test: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SequenceEntry {
    pub id: usize,
    pub length: usize,
    pub trajectory: TrajectoryConfig,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SampleEntry {
    pub index: usize,
    pub sequence_id: usize,
    pub offset: usize,
    pub split: Split,
}
