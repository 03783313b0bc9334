//! Closed-loop simulation: the verdict function that maps a controller
//! behavior to property satisfaction.

pub mod mountain_car;
pub mod neural;
pub mod stl;

use std::borrow::Cow;
use std::io::Write;
use std::sync::Arc;

use serde::Serialize;

use crate::behavior::Behavior;
use crate::error::{Error, Result};
use crate::space::BoxSpace;

pub use mountain_car::{mountain_car_step, MountainCar};
pub use neural::{Activation, Layer, NeuralBehavior, Weights};
pub use stl::{Cmp, Predicate, StlFormula};

/// Deterministic discrete-time dynamics with a controller in the loop.
pub trait Plant: Send + Sync {
    fn name(&self) -> &str;
    fn state_names(&self) -> &[&'static str];
    fn control_names(&self) -> &[&'static str];
    fn bounds(&self) -> &BoxSpace;
    fn controller_input_space(&self) -> &BoxSpace;
    fn controller_output_space(&self) -> &BoxSpace;
    /// What the controller observes in `state`.
    fn control_input<'a>(&self, state: &'a [f64]) -> Cow<'a, [f64]>;
    fn step(&self, state: &[f64], control: &[f64]) -> Result<Vec<f64>>;
}

/// Anything that can judge a controller behavior: 1 (`true`) when the
/// closed loop satisfies the property.
pub trait Simulator: Send + Sync {
    fn verdict(&self, f: &dyn Behavior) -> Result<bool>;
}

impl<S: Simulator + ?Sized> Simulator for Arc<S> {
    fn verdict(&self, f: &dyn Behavior) -> Result<bool> {
        (**self).verdict(f)
    }
}

impl<S: Simulator + ?Sized> Simulator for &S {
    fn verdict(&self, f: &dyn Behavior) -> Result<bool> {
        (**self).verdict(f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Trajectory {
    pub states: Vec<Vec<f64>>,
    pub controls: Vec<Vec<f64>>,
    pub verdict: bool,
}

impl Trajectory {
    /// CSV with header `t,<state names>,<control names>`; the final state
    /// has no control and leaves those columns empty.
    pub fn write_csv<W: Write>(&self, out: W, state_names: &[&str], control_names: &[&str]) -> Result<()> {
        let mut w = csv::Writer::from_writer(out);
        let mut header = vec!["t".to_owned()];
        header.extend(state_names.iter().map(|s| s.to_string()));
        header.extend(control_names.iter().map(|s| s.to_string()));
        w.write_record(&header)?;
        for (t, s) in self.states.iter().enumerate() {
            let mut row = vec![t.to_string()];
            row.extend(s.iter().map(|v| v.to_string()));
            match self.controls.get(t) {
                Some(u) => row.extend(u.iter().map(|v| v.to_string())),
                None => row.extend(control_names.iter().map(|_| String::new())),
            }
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }
}

#[derive(Clone)]
pub struct SimulatorConfig {
    pub plant: Arc<dyn Plant>,
    pub s0: Vec<f64>,
    pub property: StlFormula,
    /// Stop the rollout once the property's goal predicate holds.
    pub stop_at_goal: bool,
}

/// Rolls out the closed loop from a fixed initial state and checks the
/// property on the trace. Pure: equal behaviors give equal trajectories.
#[derive(Clone)]
pub struct ClosedLoopSimulator {
    cfg: SimulatorConfig,
    horizon: usize,
}

impl ClosedLoopSimulator {
    pub fn new(cfg: SimulatorConfig) -> Result<Self> {
        let bounds = cfg.plant.bounds();
        bounds.check_dims(&cfg.s0)?;
        if !bounds.contains(&cfg.s0) {
            return Err(Error::Config(format!(
                "initial state {:?} lies outside the plant bounds",
                cfg.s0
            )));
        }
        let horizon = cfg.property.horizon();
        Ok(ClosedLoopSimulator { cfg, horizon })
    }

    /// Mountain car from rest in the valley, required to reach
    /// `pos >= 0.45` within 110 steps.
    pub fn mountain_car() -> Self {
        let plant = Arc::new(MountainCar::new());
        let property = StlFormula::parse("(F 0 110 (>= pos 0.45))", plant.state_names())
            .expect("static formula");
        ClosedLoopSimulator::new(SimulatorConfig {
            plant,
            s0: MountainCar::INITIAL_STATE.to_vec(),
            property,
            stop_at_goal: true,
        })
        .expect("static config")
    }

    pub fn config(&self) -> &SimulatorConfig {
        &self.cfg
    }

    pub fn plant(&self) -> &dyn Plant {
        self.cfg.plant.as_ref()
    }

    pub fn horizon(&self) -> usize {
        self.horizon
    }

    pub fn simulate(&self, f: &dyn Behavior) -> Result<Trajectory> {
        let plant = self.cfg.plant.as_ref();
        if f.input_space() != plant.controller_input_space()
            || f.output_space() != plant.controller_output_space()
        {
            return Err(Error::Dimension(
                "controller spaces do not match the plant interface".into(),
            ));
        }
        let goal = if self.cfg.stop_at_goal {
            self.cfg.property.goal()
        } else {
            None
        };
        let mut states = Vec::with_capacity(self.horizon + 1);
        let mut controls = Vec::with_capacity(self.horizon);
        let mut state = self.cfg.s0.clone();
        for t in 0..self.horizon {
            if let Some(g) = goal {
                if g.holds(std::slice::from_ref(&state))? {
                    break;
                }
            }
            let u = f.eval(&plant.control_input(&state));
            let next = plant.step(&state, &u)?;
            if next.iter().any(|v| !v.is_finite()) {
                return Err(Error::NumericDivergence {
                    step: t + 1,
                    state: next,
                });
            }
            states.push(std::mem::replace(&mut state, next));
            controls.push(u);
        }
        states.push(state);
        let verdict = self.cfg.property.holds(&states)?;
        Ok(Trajectory {
            states,
            controls,
            verdict,
        })
    }
}

impl Simulator for ClosedLoopSimulator {
    fn verdict(&self, f: &dyn Behavior) -> Result<bool> {
        Ok(self.simulate(f)?.verdict)
    }
}

/// Returns the same verdict for every behavior.
#[derive(Debug, Clone, Copy)]
pub struct ConstantSimulator(pub bool);

impl Simulator for ConstantSimulator {
    fn verdict(&self, _f: &dyn Behavior) -> Result<bool> {
        Ok(self.0)
    }
}

/// Closure-backed simulator, used for toy models.
pub struct FnSimulator<F>(pub F);

impl<F> Simulator for FnSimulator<F>
where
    F: Fn(&dyn Behavior) -> bool + Send + Sync,
{
    fn verdict(&self, f: &dyn Behavior) -> Result<bool> {
        Ok((self.0)(f))
    }
}
