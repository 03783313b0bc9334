//! Controller I/O behaviors, the behavior distance, and the partial
//! behavior order relative to a factual base.

use std::fmt;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::space::{chebyshev, BoxSpace, GridPartition};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BehaviorKind {
    Neural,
    Scripted,
    Representative,
}

/// A deterministic, total map from an input box into an output box.
///
/// Implementations clamp their output into [`Behavior::output_space`]
/// and must return bitwise-equal results for equal inputs.
pub trait Behavior: Send + Sync {
    fn input_space(&self) -> &BoxSpace;
    fn output_space(&self) -> &BoxSpace;
    fn kind(&self) -> BehaviorKind;
    fn eval(&self, x: &[f64]) -> Vec<f64>;
}

impl<B: Behavior + ?Sized> Behavior for Arc<B> {
    fn input_space(&self) -> &BoxSpace {
        (**self).input_space()
    }
    fn output_space(&self) -> &BoxSpace {
        (**self).output_space()
    }
    fn kind(&self) -> BehaviorKind {
        (**self).kind()
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        (**self).eval(x)
    }
}

impl<B: Behavior + ?Sized> Behavior for Box<B> {
    fn input_space(&self) -> &BoxSpace {
        (**self).input_space()
    }
    fn output_space(&self) -> &BoxSpace {
        (**self).output_space()
    }
    fn kind(&self) -> BehaviorKind {
        (**self).kind()
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        (**self).eval(x)
    }
}

/// Closure-backed behavior. Output is clamped into the output box.
pub struct FnBehavior<F> {
    input: BoxSpace,
    output: BoxSpace,
    f: F,
}

impl<F> FnBehavior<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync,
{
    pub fn new(input: BoxSpace, output: BoxSpace, f: F) -> Self {
        FnBehavior { input, output, f }
    }
}

impl<F> Behavior for FnBehavior<F>
where
    F: Fn(&[f64]) -> Vec<f64> + Send + Sync,
{
    fn input_space(&self) -> &BoxSpace {
        &self.input
    }
    fn output_space(&self) -> &BoxSpace {
        &self.output
    }
    fn kind(&self) -> BehaviorKind {
        BehaviorKind::Scripted
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let x = self.input.clamp(x);
        self.output.clamp(&(self.f)(&x))
    }
}

impl<F> fmt::Debug for FnBehavior<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("FnBehavior")
            .field("input", &self.input)
            .field("output", &self.output)
            .finish()
    }
}

/// Named hand-written controllers over a `(pos, vel)` input.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ScriptedController {
    Zero,
    Constant(Vec<f64>),
    /// Bang-bang energy pumping: `+1` when `vel >= 0`, else `-1`.
    EnergyPumping,
    /// Energy pumping with the sign inverted while `pos` is in
    /// `[-0.6, -0.2]`. Traps the mountain car in the valley.
    Flawed,
}

impl ScriptedController {
    pub fn name(&self) -> &'static str {
        match self {
            ScriptedController::Zero => "zero",
            ScriptedController::Constant(_) => "constant",
            ScriptedController::EnergyPumping => "energy_pumping",
            ScriptedController::Flawed => "flawed",
        }
    }

    pub fn from_name(name: &str) -> Result<Self> {
        match name {
            "zero" => Ok(ScriptedController::Zero),
            "energy_pumping" => Ok(ScriptedController::EnergyPumping),
            "flawed" => Ok(ScriptedController::Flawed),
            other => Err(Error::Config(format!("unknown scripted controller `{other}`"))),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ScriptedBehavior {
    input: BoxSpace,
    output: BoxSpace,
    controller: ScriptedController,
}

impl ScriptedBehavior {
    pub fn new(input: BoxSpace, output: BoxSpace, controller: ScriptedController) -> Result<Self> {
        match &controller {
            ScriptedController::EnergyPumping | ScriptedController::Flawed
                if input.dims() != 2 || output.dims() != 1 =>
            {
                return Err(Error::Dimension(
                    "energy-pumping controllers need a (pos, vel) input and scalar output".into(),
                ))
            }
            ScriptedController::Constant(c) if c.len() != output.dims() => {
                return Err(Error::Dimension("constant has wrong output dimension".into()))
            }
            _ => {}
        }
        Ok(ScriptedBehavior {
            input,
            output,
            controller,
        })
    }

    pub fn controller(&self) -> &ScriptedController {
        &self.controller
    }
}

impl Behavior for ScriptedBehavior {
    fn input_space(&self) -> &BoxSpace {
        &self.input
    }
    fn output_space(&self) -> &BoxSpace {
        &self.output
    }
    fn kind(&self) -> BehaviorKind {
        BehaviorKind::Scripted
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let x = self.input.clamp(x);
        let y = match &self.controller {
            ScriptedController::Zero => vec![0.0; self.output.dims()],
            ScriptedController::Constant(c) => c.clone(),
            ScriptedController::EnergyPumping => {
                vec![if x[1] >= 0.0 { 1.0 } else { -1.0 }]
            }
            ScriptedController::Flawed => {
                let pump = if x[1] >= 0.0 { 1.0 } else { -1.0 };
                if (-0.6..=-0.2).contains(&x[0]) {
                    vec![-pump]
                } else {
                    vec![pump]
                }
            }
        };
        self.output.clamp(&y)
    }
}

/// A map from input cells to output cells. As a [`Behavior`] it sends
/// every point of input cell `i` to the center of output cell `map[i]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RepresentativeBehavior {
    input_grid: GridPartition,
    output_grid: GridPartition,
    map: Vec<usize>,
}

impl RepresentativeBehavior {
    pub fn new(input_grid: GridPartition, output_grid: GridPartition, map: Vec<usize>) -> Result<Self> {
        if map.len() != input_grid.total() {
            return Err(Error::Dimension(format!(
                "map has {} entries for {} input cells",
                map.len(),
                input_grid.total()
            )));
        }
        if let Some(bad) = map.iter().find(|j| **j >= output_grid.total()) {
            return Err(Error::IndexOutOfRange {
                index: *bad,
                total: output_grid.total(),
            });
        }
        Ok(RepresentativeBehavior {
            input_grid,
            output_grid,
            map,
        })
    }

    pub fn input_grid(&self) -> &GridPartition {
        &self.input_grid
    }

    pub fn output_grid(&self) -> &GridPartition {
        &self.output_grid
    }

    pub fn map(&self) -> &[usize] {
        &self.map
    }

    pub fn target(&self, input_cell: usize) -> usize {
        self.map[input_cell]
    }

    pub fn same_grids(&self, other: &RepresentativeBehavior) -> bool {
        self.input_grid == other.input_grid && self.output_grid == other.output_grid
    }

    /// Exact partial-order test on the representative space: one probe
    /// per input cell decides it, since each behavior is constant per cell.
    pub fn leq(&self, other: &RepresentativeBehavior, base: &RepresentativeBehavior) -> Result<bool> {
        if !self.same_grids(other) || !self.same_grids(base) {
            return Err(Error::GridMismatch("representative behaviors on different grids".into()));
        }
        let out = &self.output_grid;
        for i in 0..self.map.len() {
            let b = out.multi_of(base.map[i]);
            let f1 = out.multi_of(self.map[i]);
            let f2 = out.multi_of(other.map[i]);
            // Centers are strictly increasing in the per-axis index.
            for j in 0..out.dims() {
                let up = b[j] <= f1[j] && f1[j] <= f2[j];
                let down = b[j] >= f1[j] && f1[j] >= f2[j];
                if !(up || down) {
                    return Ok(false);
                }
            }
        }
        Ok(true)
    }
}

impl Behavior for RepresentativeBehavior {
    fn input_space(&self) -> &BoxSpace {
        self.input_grid.space()
    }
    fn output_space(&self) -> &BoxSpace {
        self.output_grid.space()
    }
    fn kind(&self) -> BehaviorKind {
        BehaviorKind::Representative
    }
    fn eval(&self, x: &[f64]) -> Vec<f64> {
        let i = self.input_grid.locate_clamped(x);
        self.output_grid.center_unchecked(self.map[i])
    }
}

/// The behavior a representative map stands for.
pub fn recon(g: &RepresentativeBehavior) -> &dyn Behavior {
    g
}

/// Finite set of evaluation points used to compare black-box behaviors.
#[derive(Debug, Clone)]
pub enum SamplingPlan {
    /// One point per cell center.
    CellCenters(GridPartition),
    /// `per_cell` probe points per cell (center first).
    CellProbes { grid: GridPartition, per_cell: usize },
    Points(Vec<Vec<f64>>),
}

impl SamplingPlan {
    pub fn points(&self) -> Result<Vec<Vec<f64>>> {
        match self {
            SamplingPlan::CellCenters(g) => (0..g.total()).map(|i| g.center_of_flat(i)).collect(),
            SamplingPlan::CellProbes { grid, per_cell } => {
                let mut out = Vec::with_capacity(grid.total() * per_cell);
                for i in 0..grid.total() {
                    out.extend(grid.probe_points(i, *per_cell)?);
                }
                Ok(out)
            }
            SamplingPlan::Points(p) => Ok(p.clone()),
        }
    }
}

fn check_compatible(a: &dyn Behavior, b: &dyn Behavior) -> Result<()> {
    if a.input_space() != b.input_space() || a.output_space() != b.output_space() {
        return Err(Error::Dimension("behaviors are defined on different spaces".into()));
    }
    Ok(())
}

/// Max over probe points of the max-norm output gap. A lower bound on the
/// supremum over the whole input box.
pub fn behavior_distance(f1: &dyn Behavior, f2: &dyn Behavior, probe: &SamplingPlan) -> Result<f64> {
    check_compatible(f1, f2)?;
    let mut d: f64 = 0.0;
    for x in probe.points()? {
        f1.input_space().check_dims(&x)?;
        d = d.max(chebyshev(&f1.eval(&x), &f2.eval(&x)));
    }
    Ok(d)
}

/// `f1` is at least as close to `base` as `f2` on every probe point and
/// output dimension, on the same side.
pub fn leq_behavior(
    f1: &dyn Behavior,
    f2: &dyn Behavior,
    base: &dyn Behavior,
    probe: &SamplingPlan,
) -> Result<bool> {
    check_compatible(f1, f2)?;
    check_compatible(f1, base)?;
    for x in probe.points()? {
        f1.input_space().check_dims(&x)?;
        let (y1, y2, yb) = (f1.eval(&x), f2.eval(&x), base.eval(&x));
        for j in 0..yb.len() {
            let up = yb[j] <= y1[j] && y1[j] <= y2[j];
            let down = yb[j] >= y1[j] && y1[j] >= y2[j];
            if !(up || down) {
                return Ok(false);
            }
        }
    }
    Ok(true)
}
