//! Target velocity generators.

use nalgebra::Vector3;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rangeavoid::VelocityCommand;

use crate::scenario::{CommandConfig, ScriptSegment};
use crate::scene::Aabb;

/// Stream id used for the random-target generator.
const RANDOM_TARGET_STREAM: u64 = 1;

#[derive(Debug, Clone)]
enum Kind {
    Waypoints {
        points: Vec<Vector3<f64>>,
        arrival: f64,
        next: usize,
    },
    Random {
        region: Aabb,
        period_ticks: usize,
        arrival: f64,
        rng: ChaCha8Rng,
        target: Vector3<f64>,
        /// Distance to the target at each re-sampling.
        misses: Vec<f64>,
    },
    Script {
        segments: Vec<ScriptSegment>,
    },
    External,
}

#[derive(Debug, Clone)]
pub struct CommandSource {
    kind: Kind,
    speed: f64,
}

fn sample(region: &Aabb, rng: &mut ChaCha8Rng) -> Vector3<f64> {
    Vector3::from_fn(|i, _| {
        if region.min[i] < region.max[i] {
            rng.random_range(region.min[i]..region.max[i])
        } else {
            region.min[i]
        }
    })
}

fn toward(from: &Vector3<f64>, to: &Vector3<f64>, speed: f64, arrival: f64) -> VelocityCommand {
    let d = to - from;
    let n = d.norm();
    if n <= arrival {
        Vector3::zeros()
    } else {
        d * (speed / n)
    }
}

fn advance(points: &[Vector3<f64>], arrival: f64, next: &mut usize, position: &Vector3<f64>) {
    while *next < points.len() && (points[*next] - position).norm() <= arrival {
        *next += 1;
    }
}

impl CommandSource {
    pub fn new(cfg: &CommandConfig, speed: f64, dt: f64, seed: u64) -> Self {
        let kind = match cfg {
            CommandConfig::Waypoints { points, arrival_radius } => Kind::Waypoints {
                points: points.iter().map(|p| Vector3::from(*p)).collect(),
                arrival: *arrival_radius,
                next: 0,
            },
            CommandConfig::Random {
                region,
                resample_period,
                arrival_radius,
            } => {
                let mut rng = ChaCha8Rng::seed_from_u64(seed);
                rng.set_stream(RANDOM_TARGET_STREAM);
                let target = sample(region, &mut rng);
                Kind::Random {
                    region: *region,
                    period_ticks: ((resample_period / dt).round() as usize).max(1),
                    arrival: *arrival_radius,
                    rng,
                    target,
                    misses: Vec::new(),
                }
            }
            CommandConfig::Script { segments } => Kind::Script {
                segments: segments.clone(),
            },
            CommandConfig::Teleop => Kind::External,
        };
        Self { kind, speed }
    }

    /// Target velocity for tick `tick` at time `t`. `external` feeds the
    /// teleop source and is ignored otherwise.
    pub fn target(
        &mut self,
        tick: usize,
        t: f64,
        position: &Vector3<f64>,
        external: Option<VelocityCommand>,
    ) -> VelocityCommand {
        let speed = self.speed;
        match &mut self.kind {
            Kind::Waypoints { points, arrival, next } => {
                advance(points, *arrival, next, position);
                match points.get(*next) {
                    Some(wp) => toward(position, wp, speed, *arrival),
                    None => Vector3::zeros(),
                }
            }
            Kind::Random {
                region,
                period_ticks,
                arrival,
                rng,
                target,
                misses,
            } => {
                if tick > 0 && tick % *period_ticks == 0 {
                    misses.push((*target - position).norm());
                    *target = sample(region, rng);
                }
                toward(position, target, speed, *arrival)
            }
            Kind::Script { segments } => {
                let mut end = 0.0;
                for s in segments.iter() {
                    end += s.duration;
                    if t < end - 1e-9 {
                        return Vector3::from(s.velocity);
                    }
                }
                Vector3::zeros()
            }
            Kind::External => external.unwrap_or_else(Vector3::zeros),
        }
    }

    /// Marks waypoints within the arrival radius of `position` as reached.
    pub fn advance(&mut self, position: &Vector3<f64>) {
        if let Kind::Waypoints { points, arrival, next } = &mut self.kind {
            advance(points, *arrival, next, position);
        }
    }

    /// Point the vehicle is currently flying toward, if any.
    pub fn goal(&self) -> Option<Vector3<f64>> {
        match &self.kind {
            Kind::Waypoints { points, next, .. } => points.get(*next).copied(),
            Kind::Random { target, .. } => Some(*target),
            _ => None,
        }
    }

    pub fn is_waypoint_mode(&self) -> bool {
        matches!(self.kind, Kind::Waypoints { .. })
    }

    /// All waypoints reached.
    pub fn finished(&self) -> bool {
        matches!(&self.kind, Kind::Waypoints { points, next, .. } if *next >= points.len())
    }

    /// Distance to the commanded goal at the end of the run: the last
    /// waypoint, or the mean miss distance over every random target. `NaN`
    /// for sources without a goal.
    pub fn d_target(&self, position: &Vector3<f64>) -> f64 {
        match &self.kind {
            Kind::Waypoints { points, .. } => (points[points.len() - 1] - position).norm(),
            Kind::Random { target, misses, .. } => {
                let last = (target - position).norm();
                (misses.iter().sum::<f64>() + last) / (misses.len() + 1) as f64
            }
            _ => f64::NAN,
        }
    }
}
