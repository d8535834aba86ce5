//! Synthetic constant-velocity worlds with misdetections, clutter and
//! detection confidences.
//!
//! Randomness is counter-based: every draw comes from a generator seeded by
//! `(seed, stream, frame/object)`, so adding an object never changes the
//! draws of any other object or frame.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::filter::Rect;
use crate::metrics::{AnnotatedFrame, AnnotatedObject};
use crate::scalar::Scalar;
use crate::state::Measurement;

/// Detection confidence distributions, clamped to `[0, 1]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ScoreModel {
    pub true_mean: f64,
    pub true_std: f64,
    pub clutter_mean: f64,
    pub clutter_std: f64,
}

impl Default for ScoreModel {
    fn default() -> Self {
        Self {
            true_mean: 0.8,
            true_std: 0.1,
            clutter_mean: 0.4,
            clutter_std: 0.15,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ScenarioConfig {
    pub seed: u64,
    pub area: Rect<f64>,
    pub n_frames: usize,
    pub dt: f64,
    /// Objects alive at frame 0.
    pub initial_objects: usize,
    /// Expected new objects per frame.
    pub birth_rate: f64,
    /// Expected lifetime in frames; `inf` for immortal objects.
    pub mean_lifetime: f64,
    pub speed_range: [f64; 2],
    pub detection_prob: f64,
    pub position_noise_std: f64,
    /// Expected false alarms per frame.
    pub clutter_rate: f64,
    pub score_model: ScoreModel,
    pub class: String,
    /// Box dimensions `[l, w, h]` attached to every detection.
    pub box_size: [f64; 3],
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            area: Rect {
                min_x: -100.0,
                min_y: -100.0,
                max_x: 100.0,
                max_y: 100.0,
            },
            n_frames: 100,
            dt: 0.1,
            initial_objects: 5,
            birth_rate: 0.0,
            mean_lifetime: f64::INFINITY,
            speed_range: [2.0, 10.0],
            detection_prob: 0.95,
            position_noise_std: 0.3,
            clutter_rate: 5.0,
            score_model: ScoreModel::default(),
            class: "vehicle".to_string(),
            box_size: [4.5, 1.9, 1.6],
        }
    }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<()> {
        if !self.area.is_valid() {
            return Err(invalid("scenario area must be non-degenerate"));
        }
        if !(self.dt > 0.0) || !self.dt.is_finite() {
            return Err(invalid("dt must be positive"));
        }
        for (name, v) in [
            ("birth_rate", self.birth_rate),
            ("clutter_rate", self.clutter_rate),
            ("position_noise_std", self.position_noise_std),
            ("score_model.true_std", self.score_model.true_std),
            ("score_model.clutter_std", self.score_model.clutter_std),
        ] {
            if !(v >= 0.0) || !v.is_finite() {
                return Err(invalid(format!("{name} must be finite and >= 0")));
            }
        }
        if !(self.mean_lifetime > 0.0) {
            return Err(invalid("mean_lifetime must be positive"));
        }
        if !(0.0..=1.0).contains(&self.detection_prob) {
            return Err(invalid("detection_prob must lie in [0, 1]"));
        }
        let [lo, hi] = self.speed_range;
        if !(lo >= 0.0 && hi >= lo && hi.is_finite()) {
            return Err(invalid("speed_range must satisfy 0 <= min <= max"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimDetection<T: Scalar> {
    pub measurement: Measurement<T>,
    pub score: T,
    pub class: String,
    /// Ground-truth object id; `None` for clutter.
    pub truth: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Scenario<T: Scalar> {
    pub gt: Vec<AnnotatedFrame<T>>,
    pub detections: Vec<Vec<SimDetection<T>>>,
    pub timestamps: Vec<f64>,
}

impl<T: Scalar> Scenario<T> {
    pub fn clutter_count(&self) -> usize {
        self.detections
            .iter()
            .flatten()
            .filter(|d| d.truth.is_none())
            .count()
    }
}

const STREAM_BIRTH: u64 = 1;
const STREAM_OBJECT: u64 = 2;
const STREAM_DETECT: u64 = 3;
const STREAM_CLUTTER: u64 = 4;

fn splitmix(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E37_79B9_7F4A_7C15);
    x = (x ^ (x >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    x ^ (x >> 31)
}

fn stream_rng(seed: u64, stream: u64, a: u64, b: u64) -> ChaCha8Rng {
    let key = splitmix(seed ^ splitmix(stream ^ splitmix(a ^ splitmix(b))));
    ChaCha8Rng::seed_from_u64(key)
}

fn poisson(rng: &mut impl Rng, rate: f64) -> usize {
    if rate <= 0.0 {
        return 0;
    }
    Poisson::new(rate).expect("positive rate").sample(rng) as usize
}

fn clamp_score(rng: &mut impl Rng, mean: f64, std: f64) -> f64 {
    let s = if std > 0.0 {
        Normal::new(mean, std).expect("valid normal").sample(rng)
    } else {
        mean
    };
    s.clamp(0.0, 1.0)
}

struct Trajectory {
    id: u64,
    birth: usize,
    /// Last frame alive (inclusive).
    death: usize,
    position: [f64; 2],
    velocity: [f64; 2],
}

impl Trajectory {
    fn position_at(&self, frame: usize, dt: f64) -> [f64; 2] {
        let t = (frame - self.birth) as f64 * dt;
        [
            self.position[0] + self.velocity[0] * t,
            self.position[1] + self.velocity[1] * t,
        ]
    }
}

fn realise(config: &ScenarioConfig, id: u64, birth: usize) -> Trajectory {
    let mut rng = stream_rng(config.seed, STREAM_OBJECT, id, 0);
    let a = &config.area;
    let x = rng.random_range(a.min_x..=a.max_x);
    let y = rng.random_range(a.min_y..=a.max_y);
    let heading = rng.random_range(0.0..std::f64::consts::TAU);
    let [lo, hi] = config.speed_range;
    let speed = if hi > lo {
        rng.random_range(lo..=hi)
    } else {
        lo
    };
    let death_prob = (1.0 / config.mean_lifetime).min(1.0);
    let mut death = birth;
    if death_prob < 1.0 {
        // geometric: survive each subsequent frame with probability 1 - p
        while death + 1 < config.n_frames && !rng.random_bool(death_prob) {
            death += 1;
        }
    }
    Trajectory {
        id,
        birth,
        death,
        position: [x, y],
        velocity: [speed * heading.cos(), speed * heading.sin()],
    }
}

/// Realises ground truth and detections for every frame.
pub fn generate<T: Scalar>(config: &ScenarioConfig) -> Result<Scenario<T>> {
    config.validate()?;
    let n = config.n_frames;
    let mut trajectories = Vec::new();
    let mut next_id = 0u64;
    for frame in 0..n {
        let born = if frame == 0 {
            config.initial_objects
        } else {
            let mut rng = stream_rng(config.seed, STREAM_BIRTH, frame as u64, 0);
            poisson(&mut rng, config.birth_rate)
        };
        for _ in 0..born {
            trajectories.push(realise(config, next_id, frame));
            next_id += 1;
        }
    }

    let mut gt = Vec::with_capacity(n);
    let mut detections = Vec::with_capacity(n);
    let sm = &config.score_model;
    let noise = (config.position_noise_std > 0.0)
        .then(|| Normal::new(0.0, config.position_noise_std).expect("valid normal"));
    for frame in 0..n {
        let mut objects = Vec::new();
        let mut dets = Vec::new();
        for tr in trajectories
            .iter()
            .filter(|t| t.birth <= frame && frame <= t.death)
        {
            let p = tr.position_at(frame, config.dt);
            objects.push(AnnotatedObject {
                id: tr.id,
                position: [T::lit(p[0]), T::lit(p[1])],
                class: config.class.clone(),
            });
            let mut rng = stream_rng(config.seed, STREAM_DETECT, frame as u64, tr.id);
            if rng.random_bool(config.detection_prob) {
                let (nx, ny) = match &noise {
                    Some(d) => (d.sample(&mut rng), d.sample(&mut rng)),
                    None => (0.0, 0.0),
                };
                dets.push(SimDetection {
                    measurement: Measurement::new(T::lit(p[0] + nx), T::lit(p[1] + ny)),
                    score: T::lit(clamp_score(&mut rng, sm.true_mean, sm.true_std)),
                    class: config.class.clone(),
                    truth: Some(tr.id),
                });
            }
        }
        let mut rng = stream_rng(config.seed, STREAM_CLUTTER, frame as u64, 0);
        let a = &config.area;
        for _ in 0..poisson(&mut rng, config.clutter_rate) {
            let x = rng.random_range(a.min_x..=a.max_x);
            let y = rng.random_range(a.min_y..=a.max_y);
            dets.push(SimDetection {
                measurement: Measurement::new(T::lit(x), T::lit(y)),
                score: T::lit(clamp_score(&mut rng, sm.clutter_mean, sm.clutter_std)),
                class: config.class.clone(),
                truth: None,
            });
        }
        gt.push(AnnotatedFrame::new(frame as u64, objects));
        detections.push(dets);
    }
    Ok(Scenario {
        gt,
        detections,
        timestamps: (0..n).map(|f| f as f64 * config.dt).collect(),
    })
}
