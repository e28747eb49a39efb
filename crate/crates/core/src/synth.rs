//! Synthetic scenes with known generating fields, for tests and demos.

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::fields::{rk4_step, FnField, Scaled};
use crate::ingest::{Sample, Trajectory};
use crate::Vec2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Scenario {
    StraightCorridor,
    TwoCorridor,
    Circle,
    Crossing,
}

impl Scenario {
    pub const ALL: [Scenario; 4] =
        [Scenario::StraightCorridor, Scenario::TwoCorridor, Scenario::Circle, Scenario::Crossing];

    pub fn name(self) -> &'static str {
        match self {
            Scenario::StraightCorridor => "straight-corridor",
            Scenario::TwoCorridor => "two-corridor",
            Scenario::Circle => "circle",
            Scenario::Crossing => "crossing",
        }
    }

    /// Scene rectangle `[xmin, ymin, xmax, ymax]` the agents move in.
    pub fn bounds(self) -> [f64; 4] {
        match self {
            Scenario::StraightCorridor => [0.0, 0.0, 20.0, 10.0],
            _ => [0.0, 0.0, 20.0, 20.0],
        }
    }

    /// Number of generating fields.
    pub fn n_fields(self) -> usize {
        match self {
            Scenario::TwoCorridor | Scenario::Crossing => 2,
            _ => 1,
        }
    }
}

impl fmt::Display for Scenario {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Scenario {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Scenario::ALL.into_iter().find(|sc| sc.name() == s).ok_or_else(|| {
            let names: Vec<&str> = Scenario::ALL.iter().map(|s| s.name()).collect();
            Error::InvalidInput(format!("unknown scenario '{s}'; choose one of {}", names.join(", ")))
        })
    }
}

/// Generator settings; recorded verbatim in the truth file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub scenario: Scenario,
    pub count: usize,
    /// Measurement noise std per axis, scene units.
    pub noise: f64,
    /// Brownian model-noise rate; per-axis variance grows as `kappa · t`.
    pub kappa: f64,
    pub seed: u64,
    pub frame_dt: f64,
    /// Mean agent speed, scene units per second.
    pub speed: f64,
    /// Agent speeds are uniform in `speed · [1 - jitter, 1 + jitter]`.
    pub speed_jitter: f64,
    /// Total heading change, in radians, across the two-corridor scene.
    pub bend: f64,
    pub max_frames: usize,
}

impl SynthConfig {
    pub fn new(scenario: Scenario, count: usize, seed: u64) -> Self {
        Self {
            scenario,
            count,
            noise: 0.0,
            kappa: 0.0,
            seed,
            frame_dt: 0.1,
            speed: 1.0,
            speed_jitter: 0.2,
            bend: 1.6,
            max_frames: 400,
        }
    }

    /// Heading of generating field `label` at scene point `p`.
    pub fn heading(&self, label: usize, p: &Vec2) -> Vec2 {
        let theta = match (self.scenario, label) {
            (Scenario::StraightCorridor, _) => 0.0,
            (Scenario::TwoCorridor, l) => {
                let b = self.scenario.bounds();
                let a = self.bend * (p.x - b[0]) / (b[2] - b[0]);
                if l == 0 {
                    a
                } else {
                    -a
                }
            }
            (Scenario::Circle, _) => {
                let d = p - CIRCLE_CENTER;
                d.y.atan2(d.x) + 0.5 * PI
            }
            (Scenario::Crossing, 0) => 0.0,
            (Scenario::Crossing, _) => 0.5 * PI,
        };
        Vec2::new(theta.cos(), theta.sin())
    }
}

const CIRCLE_CENTER: Vec2 = Vec2::new(10.0, 10.0);
const SUBSTEPS: usize = 10;
const MIN_FRAMES: usize = 10;

/// Generating parameters and per-trajectory field labels.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthTruth {
    pub config: SynthConfig,
    pub bounds: [f64; 4],
    /// Generating field index per trajectory, in output order.
    pub labels: Vec<usize>,
    /// Agent speed per trajectory.
    pub speeds: Vec<f64>,
}

fn inside(b: &[f64; 4], p: &Vec2) -> bool {
    p.x >= b[0] && p.x <= b[2] && p.y >= b[1] && p.y <= b[3]
}

pub fn generate(config: &SynthConfig) -> Result<(Vec<Trajectory>, SynthTruth)> {
    if config.count == 0 {
        return invalid("synthetic count must be positive");
    }
    if !(config.frame_dt > 0.0 && config.speed > 0.0) {
        return invalid("frame_dt and speed must be positive");
    }
    if !(config.noise >= 0.0 && config.kappa >= 0.0) {
        return invalid("noise levels must be non-negative");
    }
    if !(0.0..1.0).contains(&config.speed_jitter) {
        return invalid("speed_jitter must lie in [0, 1)");
    }
    if config.max_frames < MIN_FRAMES {
        return invalid(format!("max_frames must be at least {MIN_FRAMES}"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let bounds = config.scenario.bounds();
    let dt = config.frame_dt;
    let diffusion = (config.kappa * dt).sqrt();
    let mut trajs = Vec::with_capacity(config.count);
    let mut labels = Vec::with_capacity(config.count);
    let mut speeds = Vec::with_capacity(config.count);
    let mut attempts = 0;
    while trajs.len() < config.count {
        attempts += 1;
        if attempts > 100 * config.count {
            return Err(Error::Degenerate("synthetic generator keeps producing short tracks".into()));
        }
        let label = trajs.len() % config.scenario.n_fields();
        let speed = config.speed * (1.0 + config.speed_jitter * rng.random_range(-1.0..=1.0));
        let (start, arc_limit) = match (config.scenario, label) {
            (Scenario::StraightCorridor, _) => {
                (Vec2::new(rng.random_range(0.5..1.5), rng.random_range(3.0..7.0)), f64::INFINITY)
            }
            (Scenario::TwoCorridor, _) => {
                (Vec2::new(rng.random_range(0.5..1.5), rng.random_range(9.5..10.5)), f64::INFINITY)
            }
            (Scenario::Circle, _) => {
                let r: f64 = rng.random_range(4.0..8.0);
                let phi: f64 = rng.random_range(0.0..2.0 * PI);
                (CIRCLE_CENTER + Vec2::new(phi.cos(), phi.sin()) * r, PI * r)
            }
            (Scenario::Crossing, 0) => {
                (Vec2::new(rng.random_range(0.5..1.5), rng.random_range(8.0..12.0)), f64::INFINITY)
            }
            (Scenario::Crossing, _) => {
                (Vec2::new(rng.random_range(8.0..12.0), rng.random_range(0.5..1.5)), f64::INFINITY)
            }
        };
        let field = FnField(|p: &Vec2| config.heading(label, p));
        let scaled = Scaled { field: &field, speed };
        let mut x = start;
        let mut path = vec![x];
        while path.len() < config.max_frames && (path.len() as f64) * dt * speed <= arc_limit {
            for _ in 0..SUBSTEPS {
                x = rk4_step(&scaled, &x, dt / SUBSTEPS as f64);
            }
            if diffusion > 0.0 {
                x += Vec2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal)) * diffusion;
            }
            if !inside(&bounds, &x) {
                break;
            }
            path.push(x);
        }
        if path.len() < MIN_FRAMES {
            continue;
        }
        let samples = path
            .iter()
            .enumerate()
            .map(|(i, p)| {
                let mut q = *p;
                if config.noise > 0.0 {
                    q += Vec2::new(rng.sample::<f64, _>(StandardNormal), rng.sample::<f64, _>(StandardNormal))
                        * config.noise;
                }
                Sample { t: i as f64 * dt, p: q }
            })
            .collect();
        trajs.push(Trajectory::new(format!("a{:04}", trajs.len()), samples)?);
        labels.push(label);
        speeds.push(speed);
    }
    Ok((trajs, SynthTruth { config: config.clone(), bounds, labels, speeds }))
}
