//! Point-mass UAV tracking velocity commands at bounded acceleration.

use nalgebra::Vector3;
use rangeavoid::predictor::step_axis;
use rangeavoid::VelocityCommand;

use crate::scene::Scene;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct UavState {
    pub position: Vector3<f64>,
    pub velocity: Vector3<f64>,
    pub time: f64,
}

impl UavState {
    pub fn at_rest(position: Vector3<f64>) -> Self {
        Self {
            position,
            velocity: Vector3::zeros(),
            time: 0.0,
        }
    }
}

/// Same per-axis controller the predictor assumes.
pub fn step_vehicle(state: &UavState, cmd: &VelocityCommand, dt: f64, a_max: f64) -> UavState {
    let mut next = *state;
    for i in 0..3 {
        let (dp, v) = step_axis(state.velocity[i], cmd[i], dt, a_max);
        next.position[i] += dp;
        next.velocity[i] = v;
    }
    next.time += dt;
    next
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CollisionStatus {
    Clear,
    Collided,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Collision {
    pub status: CollisionStatus,
    /// Distance from the vehicle center to the nearest surface.
    pub d_true: f64,
}

pub fn check_collision(scene: &Scene, position: &Vector3<f64>, uav_radius: f64) -> Collision {
    let d_true = scene.nearest_distance(position);
    Collision {
        status: if d_true <= uav_radius {
            CollisionStatus::Collided
        } else {
            CollisionStatus::Clear
        },
        d_true,
    }
}
