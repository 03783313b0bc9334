use std::borrow::Cow;

use crate::error::Result;
use crate::sim::Plant;
use crate::space::BoxSpace;

pub const POS_MIN: f64 = -1.2;
pub const POS_MAX: f64 = 0.6;
pub const VEL_MAX: f64 = 0.07;
pub const CONTROL_GAIN: f64 = 0.0015;
/// Hill steepness.
pub const STEEPNESS: f64 = 0.0025;

/// One step of the mountain-car dynamics.
///
/// Position advances with the pre-update velocity. Both state variables
/// are clamped to their bounds and the car stops at the left wall.
pub fn mountain_car_step(state: [f64; 2], ctrl: f64) -> [f64; 2] {
    let [pos, vel] = state;
    let ctrl = ctrl.clamp(-1.0, 1.0);
    let next_pos = (pos + vel).clamp(POS_MIN, POS_MAX);
    let mut next_vel = (vel + CONTROL_GAIN * ctrl - STEEPNESS * (3.0 * pos).cos()).clamp(-VEL_MAX, VEL_MAX);
    if next_pos <= POS_MIN {
        next_vel = next_vel.max(0.0);
    }
    [next_pos, next_vel]
}

#[derive(Debug, Clone)]
pub struct MountainCar {
    bounds: BoxSpace,
    control: BoxSpace,
}

impl MountainCar {
    pub const INITIAL_STATE: [f64; 2] = [-0.5, 0.0];

    pub fn new() -> Self {
        MountainCar {
            bounds: BoxSpace::new(vec![POS_MIN, -VEL_MAX], vec![POS_MAX, VEL_MAX])
                .expect("static bounds"),
            control: BoxSpace::new(vec![-1.0], vec![1.0]).expect("static bounds"),
        }
    }
}

impl Default for MountainCar {
    fn default() -> Self {
        Self::new()
    }
}

impl Plant for MountainCar {
    fn name(&self) -> &str {
        "mountain_car"
    }

    fn state_names(&self) -> &[&'static str] {
        &["pos", "vel"]
    }

    fn control_names(&self) -> &[&'static str] {
        &["ctrl"]
    }

    fn bounds(&self) -> &BoxSpace {
        &self.bounds
    }

    fn controller_input_space(&self) -> &BoxSpace {
        &self.bounds
    }

    fn controller_output_space(&self) -> &BoxSpace {
        &self.control
    }

    fn control_input<'a>(&self, state: &'a [f64]) -> Cow<'a, [f64]> {
        Cow::Borrowed(state)
    }

    fn step(&self, state: &[f64], control: &[f64]) -> Result<Vec<f64>> {
        Ok(mountain_car_step([state[0], state[1]], control[0]).to_vec())
    }
}
