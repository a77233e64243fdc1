//! Synthetic coupled-motion generator.
//!
//! The leader's joints follow smooth sums of sinusoids around a drifting
//! root; the follower replays the leader `lag` frames later, rotated about
//! the vertical axis, shifted horizontally, with Gaussian noise on top.
//! With a lag of at least the prediction horizon, the follower's future is
//! entirely readable from the leader's observed frames, which rewards
//! cross-person attention.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::Tensor;
use crate::pose::{PoseSequence, Scene};

const OSCILLATORS: usize = 3;
// Incommensurate frequency ratios keep the trajectories from being
// trivially periodic within a window.
const FREQ_RATIOS: [f64; OSCILLATORS] = [1.0, 1.618, 2.414];

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticConfig {
    pub sequences: usize,
    pub frames: usize,
    pub joints: usize,
    pub fps: f64,
    /// Coupling lag τ in frames (≥ 1).
    pub lag: usize,
    /// Rotation of the follower about the vertical axis, radians.
    pub coupling_angle: f64,
    /// Horizontal offset of the follower, mm.
    pub follower_offset: [f64; 2],
    /// Peak oscillation amplitude per component, mm.
    pub amplitude: f64,
    /// Base oscillation frequency, Hz.
    pub frequency: f64,
    /// Root drift speed, mm per frame.
    pub drift: f64,
    /// Follower noise σ, mm.
    pub noise_sigma: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            sequences: 8,
            frames: 120,
            joints: 9,
            fps: 25.0,
            lag: 5,
            coupling_angle: 0.35,
            follower_offset: [250.0, 100.0],
            amplitude: 60.0,
            frequency: 0.6,
            drift: 1.5,
            noise_sigma: 2.0,
            seed: 0,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lag == 0 {
            return Err(Error::Config("coupling lag must be at least 1 frame".into()));
        }
        if self.noise_sigma < 0.0 {
            return Err(Error::Config("noise sigma must be non-negative".into()));
        }
        if self.joints == 0 || self.frames == 0 || self.fps <= 0.0 {
            return Err(Error::Config(
                "joints, frames and fps must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Closed-form envelope: no generated coordinate exceeds this magnitude
    /// by more than 6σ of follower noise.
    pub fn coordinate_bound(&self) -> f64 {
        let root = 200.0; // root base positions are drawn from ±200 mm
        let skeleton_extent = 100.0 + 50.0 * self.joints as f64; // base joint offsets
        let oscillation = OSCILLATORS as f64 * self.amplitude;
        let drift = self.drift * (self.frames as f64 + self.lag as f64);
        let offset = self.follower_offset[0].abs() + self.follower_offset[1].abs();
        root + skeleton_extent + oscillation + drift + offset + 6.0 * self.noise_sigma
    }
}

struct SequenceParams {
    root_base: [f64; 3],
    drift_dir: [f64; 2],
    /// Per joint, per axis, per oscillator: (amplitude, frequency, phase).
    osc: Vec<[[(f64, f64, f64); OSCILLATORS]; 3]>,
    base_offset: Vec<[f64; 3]>,
}

impl SequenceParams {
    fn draw(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Self {
        let root_base = [
            rng.random_range(-200.0..200.0),
            rng.random_range(-200.0..200.0),
            rng.random_range(0.0..200.0),
        ];
        let theta: f64 = rng.random_range(0.0..std::f64::consts::TAU);
        let drift_dir = [theta.cos(), theta.sin()];
        let mut osc = Vec::with_capacity(cfg.joints);
        let mut base_offset = Vec::with_capacity(cfg.joints);
        for j in 0..cfg.joints {
            // Core joints (the hips and back that define the body frame)
            // move far less than the limbs.
            let core = j < 3;
            let amp_scale = if core { 0.15 } else { 1.0 };
            let mut per_axis = [[(0.0, 0.0, 0.0); OSCILLATORS]; 3];
            for axis in per_axis.iter_mut() {
                for (c, slot) in axis.iter_mut().enumerate() {
                    let amp = rng.random_range(0.2..1.0) * cfg.amplitude * amp_scale;
                    let freq = cfg.frequency * FREQ_RATIOS[c] * rng.random_range(0.8..1.2);
                    let phase = rng.random_range(0.0..std::f64::consts::TAU);
                    *slot = (amp, freq, phase);
                }
            }
            osc.push(per_axis);
            // Hips sit apart on the x axis with the back above them; limbs
            // spread outward so skeleton edges have non-zero rest lengths.
            let offset = match j {
                0 => [-120.0 + rng.random_range(-10.0..10.0), 0.0, 0.0],
                1 => [120.0 + rng.random_range(-10.0..10.0), 0.0, 0.0],
                2 => [0.0, rng.random_range(-10.0..10.0), 150.0],
                _ => [
                    rng.random_range(-100.0..100.0),
                    rng.random_range(-100.0..100.0),
                    50.0 * j as f64 + rng.random_range(-25.0..25.0),
                ],
            };
            base_offset.push(offset);
        }
        Self {
            root_base,
            drift_dir,
            osc,
            base_offset,
        }
    }

    /// Leader joint position at (possibly negative) frame time `t`.
    fn leader_joint(&self, cfg: &SyntheticConfig, j: usize, t: f64) -> [f64; 3] {
        let mut p = [
            self.root_base[0] + cfg.drift * self.drift_dir[0] * t + self.base_offset[j][0],
            self.root_base[1] + cfg.drift * self.drift_dir[1] * t + self.base_offset[j][1],
            self.root_base[2] + self.base_offset[j][2],
        ];
        for (axis, slot) in p.iter_mut().enumerate() {
            for &(amp, freq, phase) in &self.osc[j][axis] {
                *slot += amp * (std::f64::consts::TAU * freq * t / cfg.fps + phase).sin();
            }
        }
        p
    }
}

/// Generate `sequences` deterministic coupled scenes.
pub fn synth_coupled(cfg: &SyntheticConfig) -> Result<Vec<Scene>> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let noise = Normal::new(0.0, cfg.noise_sigma.max(f64::MIN_POSITIVE))
        .map_err(|e| Error::Config(format!("bad noise sigma: {e}")))?;
    let (sin_a, cos_a) = cfg.coupling_angle.sin_cos();
    let mut scenes = Vec::with_capacity(cfg.sequences);
    for _ in 0..cfg.sequences {
        let params = SequenceParams::draw(cfg, &mut rng);
        let mut leader = Vec::with_capacity(cfg.frames * cfg.joints * 3);
        let mut follower = Vec::with_capacity(cfg.frames * cfg.joints * 3);
        for t in 0..cfg.frames {
            for j in 0..cfg.joints {
                let p = params.leader_joint(cfg, j, t as f64);
                leader.extend_from_slice(&p);
                let d = params.leader_joint(cfg, j, t as f64 - cfg.lag as f64);
                let mut f = [
                    cos_a * d[0] - sin_a * d[1] + cfg.follower_offset[0],
                    sin_a * d[0] + cos_a * d[1] + cfg.follower_offset[1],
                    d[2],
                ];
                if cfg.noise_sigma > 0.0 {
                    for slot in f.iter_mut() {
                        *slot += noise.sample(&mut rng);
                    }
                }
                follower.extend_from_slice(&f);
            }
        }
        let shape = vec![cfg.frames, cfg.joints, 3];
        scenes.push(Scene::new(vec![
            PoseSequence::new(Tensor::new(shape.clone(), leader)?, cfg.fps)?,
            PoseSequence::new(Tensor::new(shape, follower)?, cfg.fps)?,
        ])?);
    }
    Ok(scenes)
}
